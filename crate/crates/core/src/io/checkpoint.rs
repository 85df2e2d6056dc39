//! Named-tensor container.
//!
//! Layout: the 8-byte magic `LDTENSOR`, the JSON index length as a
//! little-endian u64, the JSON index, then every tensor's values as
//! little-endian floats. The index maps each name to its byte offset
//! (relative to the start of the data section), shape and dtype.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{contract_err, Error, Result};
use crate::nn::ParamStore;
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 8] = b"LDTENSOR";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub offset: u64,
    pub shape: Vec<usize>,
    pub dtype: String,
}

pub fn encode<T: Scalar>(store: &ParamStore<T>) -> Result<Vec<u8>> {
    let tensors = store.named_tensors();
    let mut index = BTreeMap::new();
    let mut data = Vec::new();
    for (name, t) in &tensors {
        index.insert(name.clone(), IndexEntry { offset: data.len() as u64, shape: t.shape().to_vec(), dtype: T::DTYPE.into() });
        for &v in t.data().iter() {
            v.write_le(&mut data);
        }
    }
    let json = serde_json::to_vec(&index)?;
    let mut out = Vec::with_capacity(16 + json.len() + data.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&data);
    Ok(out)
}

fn parse_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Parse { offset, message: message.into() }
}

/// Splits a container into its index and data section.
pub fn read_index(bytes: &[u8]) -> Result<(BTreeMap<String, IndexEntry>, &[u8])> {
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(parse_err(0, "not a tensor container (bad magic)"));
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let end = 16usize.checked_add(len).filter(|&e| e <= bytes.len()).ok_or_else(|| parse_err(8, "index length past end of file"))?;
    let index = serde_json::from_slice(&bytes[16..end]).map_err(|e| parse_err(16 + e.column(), format!("bad index: {e}")))?;
    Ok((index, &bytes[end..]))
}

fn read_values<T: Scalar>(data: &[u8], entry: &IndexEntry, name: &str) -> Result<Vec<T>> {
    let n: usize = entry.shape.iter().product();
    let width = match entry.dtype.as_str() {
        "f32" => 4,
        "f64" => 8,
        other => return Err(contract_err!("tensor {name} has unsupported dtype {other}")),
    };
    let start = entry.offset as usize;
    let bytes = data
        .get(start..start + n * width)
        .ok_or_else(|| contract_err!("tensor {name} extends past the data section"))?;
    Ok(bytes
        .chunks_exact(width)
        .map(|c| if width == 4 { T::c(f32::read_le(c) as f64) } else { T::c(f64::read_le(c)) })
        .collect())
}

/// Loads every tensor of `store` from the container. Names and shapes must
/// match; values stored in the other float width are converted.
pub fn decode_into<T: Scalar>(bytes: &[u8], store: &ParamStore<T>) -> Result<()> {
    let (index, data) = read_index(bytes)?;
    let tensors = store.named_tensors();
    let mut values = Vec::with_capacity(tensors.len());
    for (name, t) in &tensors {
        let entry = index.get(name).ok_or_else(|| contract_err!("checkpoint has no tensor named {name}"))?;
        if entry.shape != t.shape() {
            return Err(contract_err!("tensor {name}: checkpoint shape {:?}, model shape {:?}", entry.shape, t.shape()));
        }
        values.push(read_values(data, entry, name)?);
    }
    if index.len() != tensors.len() {
        let extra = index.keys().find(|k| !tensors.iter().any(|(n, _)| n == *k)).cloned().unwrap_or_default();
        return Err(contract_err!("checkpoint holds tensors the model lacks, e.g. {extra}"));
    }
    store.restore(&values)
}

pub fn save<T: Scalar>(path: &Path, store: &ParamStore<T>) -> Result<()> {
    Ok(std::fs::write(path, encode(store)?)?)
}

pub fn load<T: Scalar>(path: &Path, store: &ParamStore<T>) -> Result<()> {
    decode_into(&std::fs::read(path)?, store)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{BatchNorm2d, Init};

    fn store(seed: u64) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        let mut init = Init::new(&mut s, seed);
        init.kaiming("a.weight", &[4, 3, 3, 3], 27);
        init.zeros("a.bias", &[4]);
        BatchNorm2d::new(&mut init, "bn", 4);
        s
    }

    #[test]
    fn round_trip_restores_params_and_buffers() {
        let (src, dst) = (store(1), store(2));
        src.buffers()[0].1.data_mut()[2] = 0.75;
        assert_ne!(src.snapshot(), dst.snapshot());
        decode_into(&encode(&src).unwrap(), &dst).unwrap();
        assert_eq!(src.snapshot(), dst.snapshot());
    }

    #[test]
    fn index_describes_layout() {
        let bytes = encode(&store(1)).unwrap();
        let (index, data) = read_index(&bytes).unwrap();
        let w = &index["a.weight"];
        assert_eq!((w.shape.clone(), w.dtype.as_str()), (vec![4, 3, 3, 3], "f64"));
        let total: usize = index.values().map(|e| e.shape.iter().product::<usize>() * 8).sum();
        assert_eq!(data.len(), total);
    }

    #[test]
    fn cross_precision_load() {
        let mut s32 = ParamStore::<f32>::new();
        let mut init = Init::new(&mut s32, 1);
        init.kaiming("a.weight", &[4, 3, 3, 3], 27);
        init.zeros("a.bias", &[4]);
        BatchNorm2d::new(&mut init, "bn", 4);
        let dst = store(9);
        decode_into(&encode(&s32).unwrap(), &dst).unwrap();
        let want: Vec<f64> = s32.snapshot()[0].iter().map(|&v| v as f64).collect();
        assert_eq!(dst.snapshot()[0], want);
    }

    #[test]
    fn mismatches_are_rejected() {
        let bytes = encode(&store(1)).unwrap();
        let mut other = ParamStore::<f64>::new();
        Init::new(&mut other, 0).zeros("a.weight", &[4, 3, 3, 1]);
        assert!(matches!(decode_into(&bytes, &other), Err(Error::Contract(_))));
        assert!(matches!(decode_into(&bytes[..10], &store(1)), Err(Error::Parse { offset: 0, .. })));
        let mut bad = bytes.clone();
        bad[15] = 0xff;
        assert!(matches!(decode_into(&bad, &store(1)), Err(Error::Parse { offset: 8, .. })));
        assert!(decode_into(&bytes[..bytes.len() - 1], &store(1)).is_err());
    }
}

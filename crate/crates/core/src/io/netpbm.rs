use std::path::Path;

use crate::error::{dim_err, Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

fn parse_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Parse { offset, message: message.into() }
}

/// Largest depth (meters) representable in a 16-bit millimeter map.
pub const MAX_DEPTH_MM: u16 = u16::MAX;

struct Header {
    channels: usize,
    width: usize,
    height: usize,
    maxval: usize,
    payload: usize,
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    let channels = match bytes.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => return Err(parse_err(0, "expected magic P5 or P6")),
    };
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        // Whitespace and comments before each number.
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(parse_err(pos, "header ends early")),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(parse_err(pos, "expected a decimal number"));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| parse_err(start, "number out of range"))?;
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(parse_err(pos, "expected one whitespace byte after the header"));
    }
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return Err(parse_err(pos, "image dimensions must be positive"));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(parse_err(pos, format!("maxval {maxval} outside 1..=65535")));
    }
    Ok(Header { channels, width, height, maxval, payload: pos + 1 })
}

/// Raw samples of a P5/P6 file, row-major and interleaved, with their maxval.
pub struct RawImage {
    pub channels: usize,
    pub width: usize,
    pub height: usize,
    pub maxval: usize,
    pub samples: Vec<u16>,
}

pub fn decode(bytes: &[u8]) -> Result<RawImage> {
    let h = parse_header(bytes)?;
    let wide = h.maxval > 255;
    let count = h.channels * h.width * h.height;
    let need = count * if wide { 2 } else { 1 };
    let body = &bytes[h.payload..];
    if body.len() < need {
        return Err(parse_err(bytes.len(), format!("payload truncated: {} of {need} bytes", body.len())));
    }
    let samples: Vec<u16> = if wide {
        body[..need].chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect()
    } else {
        body[..need].iter().map(|&b| b as u16).collect()
    };
    if let Some(i) = samples.iter().position(|&s| s as usize > h.maxval) {
        let offset = h.payload + if wide { 2 * i } else { i };
        return Err(parse_err(offset, format!("sample exceeds maxval {}", h.maxval)));
    }
    Ok(RawImage { channels: h.channels, width: h.width, height: h.height, maxval: h.maxval, samples })
}

/// Reads a P5/P6 image into a 1×C×H×W tensor with values in [0, 1].
pub fn read_image<T: Scalar>(path: &Path) -> Result<Tensor<T>> {
    image_from_bytes(&std::fs::read(path)?)
}

pub fn image_from_bytes<T: Scalar>(bytes: &[u8]) -> Result<Tensor<T>> {
    let raw = decode(bytes)?;
    let (c, plane) = (raw.channels, raw.width * raw.height);
    let scale = 1.0 / raw.maxval as f64;
    let mut data = vec![T::zero(); c * plane];
    for (i, &s) in raw.samples.iter().enumerate() {
        data[(i % c) * plane + i / c] = T::c(s as f64 * scale);
    }
    Tensor::from_vec(&[1, c, raw.height, raw.width], data)
}

fn planes<T: Scalar>(t: &Tensor<T>, channels: usize) -> Result<(usize, usize, Vec<f64>)> {
    let [b, c, h, w] = t.dims4("image write")?;
    if b != 1 || c != channels {
        return Err(dim_err!("expected a 1x{channels}xHxW tensor, got {:?}", t.shape()));
    }
    Ok((h, w, t.data().iter().map(|v| v.f64()).collect()))
}

/// 8-bit binary PPM from a 1×3×H×W tensor in [0, 1] (values clamped).
pub fn encode_ppm<T: Scalar>(image: &Tensor<T>) -> Result<Vec<u8>> {
    let (h, w, v) = planes(image, 3)?;
    let plane = h * w;
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    for p in 0..plane {
        for c in 0..3 {
            out.push((v[c * plane + p].clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    Ok(out)
}

/// Millimeter quantization: round half to even, clamped to 16 bits.
pub fn depth_to_mm(depth: f64) -> u16 {
    (depth * 1000.0).round_ties_even().clamp(0.0, MAX_DEPTH_MM as f64) as u16
}

/// 16-bit binary PGM of a 1×1×H×W depth map in meters, stored as millimeters.
pub fn encode_depth_pgm<T: Scalar>(depth: &Tensor<T>) -> Result<Vec<u8>> {
    let (h, w, v) = planes(depth, 1)?;
    let mut out = format!("P5\n{w} {h}\n65535\n").into_bytes();
    for d in v {
        out.extend_from_slice(&depth_to_mm(d).to_be_bytes());
    }
    Ok(out)
}

pub fn write_ppm<T: Scalar>(path: &Path, image: &Tensor<T>) -> Result<()> {
    Ok(std::fs::write(path, encode_ppm(image)?)?)
}

pub fn write_depth_pgm<T: Scalar>(path: &Path, depth: &Tensor<T>) -> Result<()> {
    Ok(std::fs::write(path, encode_depth_pgm(depth)?)?)
}

/// Reads a 16-bit millimeter depth map back to meters (1×1×H×W).
pub fn read_depth_pgm<T: Scalar>(path: &Path) -> Result<Tensor<T>> {
    let raw = decode(&std::fs::read(path)?)?;
    if raw.channels != 1 {
        return Err(parse_err(0, "depth maps are single-channel P5 files"));
    }
    Tensor::from_vec(&[1, 1, raw.height, raw.width], raw.samples.iter().map(|&s| T::c(s as f64 / 1000.0)).collect())
}

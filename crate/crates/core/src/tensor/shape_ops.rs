use super::{numel, strides, Tensor};
use crate::error::{arg_err, dim_err, Result};
use crate::scalar::Scalar;

impl<T: Scalar> Tensor<T> {
    /// Gathers `out[i] = self[index[i]]`. Gradients scatter-add back, so any
    /// index map (permutation, crop, padding by repetition) differentiates.
    pub(crate) fn remap(&self, shape: Vec<usize>, index: Vec<usize>) -> Tensor<T> {
        debug_assert_eq!(numel(&shape), index.len());
        let out: Vec<T> = {
            let d = self.data();
            index.iter().map(|&i| d[i]).collect()
        };
        let n = self.numel();
        Tensor::from_op(shape, out, &[self], move || {
            Box::new(move |g: &[T]| {
                let mut gi = vec![T::zero(); n];
                for (&i, &gv) in index.iter().zip(g) {
                    gi[i] += gv;
                }
                vec![Some(gi)]
            })
        })
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<T>> {
        if numel(shape) != self.numel() {
            return Err(dim_err!("cannot reshape {:?} into {shape:?}", self.shape()));
        }
        Ok(Tensor::from_op(shape.to_vec(), self.to_vec(), &[self], || {
            Box::new(|g: &[T]| vec![Some(g.to_vec())])
        }))
    }

    /// Reorders axes: output axis `k` is input axis `axes[k]`.
    pub fn permute(&self, axes: &[usize]) -> Result<Tensor<T>> {
        let rank = self.rank();
        let mut seen = vec![false; rank];
        if axes.len() != rank || axes.iter().any(|&a| a >= rank || std::mem::replace(&mut seen[a], true)) {
            return Err(dim_err!("permute: {axes:?} is not a permutation of {rank} axes"));
        }
        let in_strides = strides(self.shape());
        let out_shape: Vec<usize> = axes.iter().map(|&a| self.shape()[a]).collect();
        let src_strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
        let index = odometer(&out_shape, &src_strides, 0);
        Ok(self.remap(out_shape, index))
    }

    /// Slice `len` entries of `axis` starting at `start`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Tensor<T>> {
        let shape = self.shape();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(dim_err!("narrow: axis {axis} range {start}..{} invalid for shape {shape:?}", start + len));
        }
        let mut out_shape = shape.to_vec();
        out_shape[axis] = len;
        let st = strides(shape);
        let index = odometer(&out_shape, &st, start * st[axis]);
        Ok(self.remap(out_shape, index))
    }

    /// Mirror the last axis.
    pub fn flip_last(&self) -> Tensor<T> {
        let shape = self.shape().to_vec();
        let w = *shape.last().expect("nonempty shape");
        let index = (0..self.numel()).map(|i| i - i % w + (w - 1 - i % w)).collect();
        self.remap(shape, index)
    }

    /// Reflection padding of the two trailing axes (edge sample not repeated).
    pub fn reflect_pad2d(&self, pad: usize) -> Result<Tensor<T>> {
        let [b, c, h, w] = self.dims4("reflect_pad2d")?;
        if pad >= h || pad >= w {
            return Err(dim_err!("reflect_pad2d: pad {pad} needs spatial size above it, got {h}x{w}"));
        }
        let reflect = |i: isize, n: usize| -> usize {
            let n = n as isize;
            let r = if i < 0 { -i } else if i >= n { 2 * (n - 1) - i } else { i };
            r as usize
        };
        let (hp, wp) = (h + 2 * pad, w + 2 * pad);
        let mut index = Vec::with_capacity(b * c * hp * wp);
        for plane in 0..b * c {
            for y in 0..hp {
                let sy = reflect(y as isize - pad as isize, h);
                for x in 0..wp {
                    let sx = reflect(x as isize - pad as isize, w);
                    index.push(plane * h * w + sy * w + sx);
                }
            }
        }
        Ok(self.remap(vec![b, c, hp, wp], index))
    }
}

/// Enumerates `base + Σ idx[k]·strides[k]` over `shape` in row-major order.
fn odometer(shape: &[usize], strides: &[usize], base: usize) -> Vec<usize> {
    let n = numel(shape);
    let mut idx = vec![0usize; shape.len()];
    let mut out = Vec::with_capacity(n);
    let mut off = base;
    for _ in 0..n {
        out.push(off);
        for ax in (0..shape.len()).rev() {
            idx[ax] += 1;
            off += strides[ax];
            if idx[ax] < shape[ax] {
                break;
            }
            off -= strides[ax] * shape[ax];
            idx[ax] = 0;
        }
    }
    out
}

/// Concatenate along `axis`; all other axes must agree.
pub fn concat<T: Scalar>(items: &[&Tensor<T>], axis: usize) -> Result<Tensor<T>> {
    let first = items.first().ok_or_else(|| arg_err!("concat of an empty sequence"))?;
    let rank = first.rank();
    if axis >= rank {
        return Err(dim_err!("concat axis {axis} out of range for rank {rank}"));
    }
    for (k, t) in items.iter().enumerate() {
        let ok = t.rank() == rank && (0..rank).all(|a| a == axis || t.shape()[a] == first.shape()[a]);
        if !ok {
            return Err(dim_err!(
                "concat along axis {axis}: item {k} has shape {:?}, incompatible with {:?}",
                t.shape(),
                first.shape()
            ));
        }
    }
    let outer: usize = first.shape()[..axis].iter().product();
    let inner: usize = first.shape()[axis + 1..].iter().product();
    let chunks: Vec<usize> = items.iter().map(|t| t.shape()[axis] * inner).collect();
    let mut shape = first.shape().to_vec();
    shape[axis] = items.iter().map(|t| t.shape()[axis]).sum();
    let total_chunk: usize = chunks.iter().sum();
    let mut out = Vec::with_capacity(outer * total_chunk);
    {
        let datas: Vec<_> = items.iter().map(|t| t.data()).collect();
        for o in 0..outer {
            for (d, &len) in datas.iter().zip(&chunks) {
                out.extend_from_slice(&d[o * len..(o + 1) * len]);
            }
        }
    }
    Ok(Tensor::from_op(shape, out, items, move || {
        Box::new(move |g: &[T]| {
            let mut grads: Vec<Vec<T>> = chunks.iter().map(|&l| Vec::with_capacity(l * outer)).collect();
            let mut off = 0;
            for _ in 0..outer {
                for (gk, &len) in grads.iter_mut().zip(&chunks) {
                    gk.extend_from_slice(&g[off..off + len]);
                    off += len;
                }
            }
            grads.into_iter().map(Some).collect()
        })
    }))
}

/// Group channel shuffle: view channels as (groups, C/groups), transpose,
/// flatten. Output channel `j·groups + i` is input channel `i·(C/groups) + j`.
pub fn channel_shuffle<T: Scalar>(x: &Tensor<T>, groups: usize) -> Result<Tensor<T>> {
    let [b, c, h, w] = x.dims4("channel_shuffle")?;
    if groups == 0 || c % groups != 0 {
        return Err(dim_err!("channel_shuffle: {c} channels not divisible into {groups} groups"));
    }
    let per = c / groups;
    let plane = h * w;
    let mut index = Vec::with_capacity(x.numel());
    for bi in 0..b {
        for oc in 0..c {
            let (j, i) = (oc / groups, oc % groups);
            let ic = i * per + j;
            let base = (bi * c + ic) * plane;
            index.extend(base..base + plane);
        }
    }
    Ok(x.remap(vec![b, c, h, w], index))
}

/// First and second half of the channel axis.
pub fn channel_split<T: Scalar>(x: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
    let [_, c, _, _] = x.dims4("channel_split")?;
    if c % 2 != 0 {
        return Err(dim_err!("channel_split: channel count {c} is odd"));
    }
    Ok((x.narrow(1, 0, c / 2)?, x.narrow(1, c / 2, c / 2)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tagged(c: usize) -> Tensor<f64> {
        Tensor::from_vec(&[1, c, 1, 1], (0..c).map(|i| i as f64).collect()).unwrap()
    }

    #[test]
    fn shuffle_two_groups_of_four() {
        let y = channel_shuffle(&tagged(4), 2).unwrap();
        assert_eq!(y.to_vec(), vec![0.0, 2.0, 1.0, 3.0]);
    }

    #[test]
    fn shuffle_single_group_is_identity() {
        let x = tagged(6);
        assert_eq!(channel_shuffle(&x, 1).unwrap().to_vec(), x.to_vec());
    }

    #[test]
    fn shuffle_rejects_indivisible() {
        assert!(matches!(channel_shuffle(&tagged(5), 2), Err(crate::Error::Dimension(_))));
    }

    proptest! {
        #[test]
        fn shuffle_inverse_is_identity(groups in 1usize..5, per in 1usize..5, seed in 0u64..1000) {
            let c = groups * per;
            let vals: Vec<f64> = (0..2 * c * 6).map(|i| ((i as u64 * 2654435761 + seed) % 1000) as f64 / 7.0).collect();
            let x = Tensor::from_vec(&[2, c, 2, 3], vals).unwrap();
            let y = channel_shuffle(&channel_shuffle(&x, groups).unwrap(), per).unwrap();
            prop_assert_eq!(y.to_vec(), x.to_vec());
        }
    }

    #[test]
    fn split_then_concat_round_trips() {
        let x = tagged(4);
        let (a, b) = channel_split(&x).unwrap();
        assert_eq!(a.to_vec(), vec![0.0, 1.0]);
        assert_eq!(b.to_vec(), vec![2.0, 3.0]);
        assert_eq!(concat(&[&a, &b], 1).unwrap().to_vec(), x.to_vec());
        assert!(channel_split(&tagged(3)).is_err());
    }

    #[test]
    fn concat_gradient_routes_each_half() {
        let a = Tensor::<f64>::leaf(&[1, 1, 1, 2], vec![1.0, 2.0]).unwrap();
        let b = Tensor::<f64>::leaf(&[1, 2, 1, 2], vec![3.0, 4.0, 5.0, 6.0]).unwrap();
        let w = Tensor::from_vec(&[1, 3, 1, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        concat(&[&a, &b], 1).unwrap().mul(&w).unwrap().sum().backward().unwrap();
        assert_eq!(a.grad().unwrap(), vec![1.0, 2.0]);
        assert_eq!(b.grad().unwrap(), vec![3.0, 4.0, 5.0, 6.0]);
    }

    #[test]
    fn permute_swaps_axes() {
        let x = Tensor::<f64>::from_vec(&[1, 2, 3, 1], (0..6).map(f64::from).collect()).unwrap();
        let y = x.permute(&[0, 2, 1, 3]).unwrap();
        assert_eq!(y.shape(), &[1, 3, 2, 1]);
        assert_eq!(y.to_vec(), vec![0.0, 3.0, 1.0, 4.0, 2.0, 5.0]);
        assert!(x.permute(&[0, 0, 1, 2]).is_err());
    }

    #[test]
    fn reflect_pad_mirrors_without_edge_repeat() {
        let x = Tensor::<f64>::from_vec(&[1, 1, 1, 3], vec![1.0, 2.0, 3.0]).unwrap();
        assert!(x.reflect_pad2d(1).is_err());
        let x = Tensor::<f64>::from_vec(&[1, 1, 2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let y = x.reflect_pad2d(1).unwrap();
        assert_eq!(y.shape(), &[1, 1, 4, 5]);
        assert_eq!(&y.to_vec()[0..5], &[5.0, 4.0, 5.0, 6.0, 5.0]);
        assert_eq!(&y.to_vec()[5..10], &[2.0, 1.0, 2.0, 3.0, 2.0]);
    }
}

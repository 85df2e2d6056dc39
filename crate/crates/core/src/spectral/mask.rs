use crate::error::{arg_err, Result};
use crate::nn::Init;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Per-channel frequency mask applied to spectra stored unshifted.
#[derive(Clone, Debug)]
pub struct LowPassMask<T: Scalar> {
    /// Shape (C, H, W), values in [0, 1].
    pub mask: Tensor<T>,
    pub cutoff_gamma: f64,
    pub learnable: bool,
}

/// Binary radial mask values for an h×w spectrum, in unshifted layout.
///
/// Frequencies are measured in centered normalized coordinates
/// u = (i − ⌊h/2⌋)/h, v = (j − ⌊w/2⌋)/w; an entry is 1 when its radius is at
/// most `gamma` times the largest radius on the grid.
pub fn mask_values(h: usize, w: usize, gamma: f64) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(arg_err!("cutoff ratio {gamma} outside [0, 1]"));
    }
    let radius = |i: usize, j: usize| {
        let u = (i as f64 - (h / 2) as f64) / h as f64;
        let v = (j as f64 - (w / 2) as f64) / w as f64;
        (u * u + v * v).sqrt()
    };
    let max = (0..h).flat_map(|i| (0..w).map(move |j| (i, j))).map(|(i, j)| radius(i, j)).fold(0.0, f64::max);
    let mut out = vec![0.0; h * w];
    for i in 0..h {
        for j in 0..w {
            // centered index i holds frequency i − ⌊h/2⌋, stored at that value mod h
            let (si, sj) = ((i + h - h / 2) % h, (j + w - w / 2) % w);
            out[si * w + sj] = if radius(i, j) <= gamma * max { 1.0 } else { 0.0 };
        }
    }
    Ok(out)
}

/// Learnable mask of shape (C, H, W) initialized to the binary radial mask.
pub fn build_mask<T: Scalar>(c: usize, h: usize, w: usize, gamma: f64) -> Result<LowPassMask<T>> {
    let plane = mask_values(h, w, gamma)?;
    let data = plane.iter().cycle().take(c * h * w).map(|&v| T::c(v)).collect();
    Ok(LowPassMask { mask: Tensor::leaf(&[c, h, w], data)?, cutoff_gamma: gamma, learnable: true })
}

impl<T: Scalar> LowPassMask<T> {
    /// Registers the mask. A learnable mask is trained without weight decay
    /// and projected to [0, 1] after each step; a frozen one stays binary.
    pub fn register(init: &mut Init<'_, T>, name: &str, c: usize, h: usize, w: usize, gamma: f64, learnable: bool) -> Result<Self> {
        let built = build_mask::<T>(c, h, w, gamma)?;
        let mask = if learnable {
            init.param_with(name, &[c, h, w], built.mask.to_vec(), false, Some((0.0, 1.0)))
        } else {
            built.mask.detach()
        };
        Ok(LowPassMask { mask, cutoff_gamma: gamma, learnable })
    }
}

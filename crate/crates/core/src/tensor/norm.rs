use super::Tensor;
use crate::error::{dim_err, Result};
use crate::scalar::Scalar;

/// Running mean/variance of a batch-norm layer, updated in training mode.
#[derive(Clone, Debug)]
pub struct BatchNormStats<T: Scalar> {
    pub mean: Tensor<T>,
    pub var: Tensor<T>,
    pub momentum: f64,
}

impl<T: Scalar> BatchNormStats<T> {
    pub fn new(channels: usize) -> Self {
        BatchNormStats {
            mean: Tensor::zeros(&[channels]),
            var: Tensor::full(&[channels], T::one()),
            momentum: 0.1,
        }
    }
}

fn channel_view<T: Scalar>(v: &Tensor<T>, c: usize, what: &str) -> Result<Tensor<T>> {
    if v.numel() != c {
        return Err(dim_err!("{what}: expected {c} entries along the normalized axis, got {}", v.numel()));
    }
    v.reshape(&[1, c, 1, 1])
}

fn standardize<T: Scalar>(x: &Tensor<T>, axes: &[usize], eps: T) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let mean = x.mean_axes(axes)?;
    let centered = x.sub(&mean)?;
    let var = centered.square().mean_axes(axes)?;
    let xhat = centered.div(&var.add_scalar(eps).sqrt())?;
    Ok((xhat, mean, var))
}

/// Normalizes each pixel of each sample over the channel axis, then applies
/// the per-channel affine map.
pub fn layer_norm<T: Scalar>(x: &Tensor<T>, gain: &Tensor<T>, bias: &Tensor<T>, eps: T) -> Result<Tensor<T>> {
    let [_, c, _, _] = x.dims4("layer_norm")?;
    let (xhat, _, _) = standardize(x, &[1], eps)?;
    xhat.mul(&channel_view(gain, c, "layer_norm gain")?)?
        .add(&channel_view(bias, c, "layer_norm bias")?)
}

/// Per-channel normalization over batch and space. In training mode batch
/// statistics are used and folded into `stats`; otherwise `stats` is used.
pub fn batch_norm<T: Scalar>(
    x: &Tensor<T>,
    gain: &Tensor<T>,
    bias: &Tensor<T>,
    eps: T,
    stats: Option<&BatchNormStats<T>>,
    training: bool,
) -> Result<Tensor<T>> {
    let [b, c, h, w] = x.dims4("batch_norm")?;
    let gain = channel_view(gain, c, "batch_norm gain")?;
    let bias = channel_view(bias, c, "batch_norm bias")?;
    let xhat = match (training, stats) {
        (false, Some(st)) => {
            let mean = channel_view(&st.mean, c, "batch_norm running mean")?;
            let denom = channel_view(&st.var, c, "batch_norm running var")?.add_scalar(eps).sqrt();
            x.sub(&mean)?.div(&denom)?
        }
        _ => {
            let (xhat, mean, var) = standardize(x, &[0, 2, 3], eps)?;
            if let Some(st) = stats {
                let n = (b * h * w) as f64;
                let m = T::c(st.momentum);
                let unbias = if n > 1.0 { T::c(n / (n - 1.0)) } else { T::one() };
                let (md, vd) = (mean.data(), var.data());
                let mut rm = st.mean.data_mut();
                let mut rv = st.var.data_mut();
                for k in 0..c {
                    rm[k] = (T::one() - m) * rm[k] + m * md[k];
                    rv[k] = (T::one() - m) * rv[k] + m * vd[k] * unbias;
                }
            }
            xhat
        }
    };
    xhat.mul(&gain)?.add(&bias)
}

//! Two-dimensional Fourier transforms on image tensors, the learnable
//! low-pass mask, and the frequency-domain global filter built from them.
//!
//! Spectra are stored unshifted: the DC coefficient sits at index (0, 0) and
//! frequency `f` of an axis of length `n` sits at index `f mod n`.

mod dfsp;
mod fft;
mod mask;

pub use dfsp::{global_filter, spatial_oracle, Dfsp, DfspOptions, Purifier};
pub use mask::{build_mask, mask_values, LowPassMask};

use crate::error::{dim_err, Result};
use crate::scalar::Scalar;
use crate::tensor::{concat, Tensor};

/// Real and imaginary planes of a complex tensor.
#[derive(Clone, Debug)]
pub struct ComplexPlanes<T: Scalar> {
    pub real: Tensor<T>,
    pub imag: Tensor<T>,
}

impl<T: Scalar> ComplexPlanes<T> {
    pub fn new(real: Tensor<T>, imag: Tensor<T>) -> Result<Self> {
        if real.shape() != imag.shape() {
            return Err(dim_err!(
                "complex planes differ in shape: real {:?}, imag {:?}",
                real.shape(),
                imag.shape()
            ));
        }
        Ok(ComplexPlanes { real, imag })
    }

    pub fn shape(&self) -> &[usize] {
        self.real.shape()
    }

    /// Elementwise complex product.
    pub fn mul(&self, other: &ComplexPlanes<T>) -> Result<ComplexPlanes<T>> {
        let real = self.real.mul(&other.real)?.sub(&self.imag.mul(&other.imag)?)?;
        let imag = self.real.mul(&other.imag)?.add(&self.imag.mul(&other.real)?)?;
        ComplexPlanes::new(real, imag)
    }
}

fn check_pow2<T: Scalar>(x: &Tensor<T>, what: &str) -> Result<[usize; 4]> {
    let dims = x.dims4(what)?;
    let [_, _, h, w] = dims;
    if !h.is_power_of_two() || !w.is_power_of_two() {
        return Err(dim_err!("{what}: spatial size {h}x{w} is not a power of two; pad first"));
    }
    Ok(dims)
}

/// Differentiable 2-D transform of `re + i·im`. The forward transform is
/// unnormalized, the inverse carries the 1/(H·W) factor.
fn transform<T: Scalar>(re: &Tensor<T>, im: Option<&Tensor<T>>, inverse: bool) -> Result<ComplexPlanes<T>> {
    let [b, c, h, w] = check_pow2(re, if inverse { "ifft2" } else { "fft2" })?;
    if let Some(im) = im {
        if im.shape() != re.shape() {
            return Err(dim_err!("ifft2: real {:?} and imaginary {:?} planes differ", re.shape(), im.shape()));
        }
    }
    let n = re.numel();
    let scale = if inverse { T::c(1.0 / (h * w) as f64) } else { T::one() };
    let mut out_re = re.to_vec();
    let mut out_im = im.map_or_else(|| vec![T::zero(); n], |t| t.to_vec());
    fft::fft2_in_place(&mut out_re, &mut out_im, h, w, inverse);
    if inverse {
        out_re.iter_mut().chain(out_im.iter_mut()).for_each(|v| *v *= scale);
    }
    out_re.extend(out_im);

    let inputs: Vec<&Tensor<T>> = std::iter::once(re).chain(im).collect();
    let has_imag = im.is_some();
    let packed = Tensor::from_op(vec![2, b, c, h, w], out_re, &inputs, move || {
        // The adjoint of scale·F± is scale·F∓.
        Box::new(move |g: &[T]| {
            let mut gr = g[..n].to_vec();
            let mut gi = g[n..].to_vec();
            fft::fft2_in_place(&mut gr, &mut gi, h, w, !inverse);
            if inverse {
                gr.iter_mut().chain(gi.iter_mut()).for_each(|v| *v *= scale);
            }
            if has_imag {
                vec![Some(gr), Some(gi)]
            } else {
                vec![Some(gr)]
            }
        })
    });
    let shape = [b, c, h, w];
    ComplexPlanes::new(packed.narrow(0, 0, 1)?.reshape(&shape)?, packed.narrow(0, 1, 1)?.reshape(&shape)?)
}

/// Per-plane 2-D DFT of a real B×C×H×W tensor with power-of-two H and W.
pub fn fft2<T: Scalar>(x: &Tensor<T>) -> Result<ComplexPlanes<T>> {
    transform(x, None, false)
}

/// Inverse 2-D DFT keeping both planes.
pub fn ifft2_complex<T: Scalar>(s: &ComplexPlanes<T>) -> Result<ComplexPlanes<T>> {
    transform(&s.real, Some(&s.imag), true)
}

/// Real part of the inverse 2-D DFT.
pub fn ifft2<T: Scalar>(s: &ComplexPlanes<T>) -> Result<Tensor<T>> {
    Ok(ifft2_complex(s)?.real)
}

/// Zero-pads the trailing axes up to the next powers of two.
pub fn pad_to_pow2<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let [b, c, h, w] = x.dims4("pad_to_pow2")?;
    let (hp, wp) = (h.next_power_of_two(), w.next_power_of_two());
    let mut y = x.clone();
    if wp > w {
        y = concat(&[&y, &Tensor::zeros(&[b, c, h, wp - w])], 3)?;
    }
    if hp > h {
        y = concat(&[&y, &Tensor::zeros(&[b, c, hp - h, wp])], 2)?;
    }
    Ok(y)
}

/// Top-left `h`×`w` window of the trailing axes.
pub fn crop<T: Scalar>(x: &Tensor<T>, h: usize, w: usize) -> Result<Tensor<T>> {
    let [_, _, hx, wx] = x.dims4("crop")?;
    let mut y = x.clone();
    if hx != h {
        y = y.narrow(2, 0, h)?;
    }
    if wx != w {
        y = y.narrow(3, 0, w)?;
    }
    Ok(y)
}

use super::{crop, fft2, ifft2, pad_to_pow2, ComplexPlanes, LowPassMask};
use crate::error::{dim_err, Result};
use crate::nn::{dropout, BatchNorm2d, Conv2d, Ctx, Init};
use crate::profile;
use crate::scalar::Scalar;
use crate::tensor::{channel_shuffle, channel_split, concat, Conv2dSpec, Tensor};

/// Spectrum purification: each plane is masked, passed through GELU, batch
/// normalized and mixed across channels by a bias-free 1×1 convolution. The
/// real and imaginary branches have their own normalization and projection.
pub struct Purifier<T: Scalar> {
    pub mask: LowPassMask<T>,
    pub norm_real: BatchNorm2d<T>,
    pub norm_imag: BatchNorm2d<T>,
    pub proj_real: Conv2d<T>,
    pub proj_imag: Conv2d<T>,
}

impl<T: Scalar> Purifier<T> {
    /// `h`×`w` is the spectrum size (already a power of two).
    pub fn new(init: &mut Init<'_, T>, name: &str, channels: usize, h: usize, w: usize, gamma: f64, learnable_mask: bool) -> Result<Self> {
        let mut sub = init.sub(name);
        let mask = LowPassMask::register(&mut sub, "mask", channels, h, w, gamma, learnable_mask)?;
        let pw = Conv2dSpec::default();
        Ok(Purifier {
            mask,
            norm_real: BatchNorm2d::new(&mut sub, "norm_real", channels),
            norm_imag: BatchNorm2d::new(&mut sub, "norm_imag", channels),
            proj_real: Conv2d::new(&mut sub, "proj_real", channels, channels, 1, pw, false),
            proj_imag: Conv2d::new(&mut sub, "proj_imag", channels, channels, 1, pw, false),
        })
    }

    pub fn forward(&self, s: &ComplexPlanes<T>, ctx: &Ctx) -> Result<ComplexPlanes<T>> {
        let [_, c, h, w] = s.real.dims4("purify")?;
        if self.mask.mask.shape() != [c, h, w] {
            return Err(dim_err!(
                "purify: mask shape {:?} does not match spectrum channels/size {:?}",
                self.mask.mask.shape(),
                [c, h, w]
            ));
        }
        let m = self.mask.mask.reshape(&[1, c, h, w])?;
        let branch = |plane: &Tensor<T>, norm: &BatchNorm2d<T>, proj: &Conv2d<T>| -> Result<Tensor<T>> {
            proj.forward(&norm.forward(&plane.mul(&m)?.gelu(), ctx)?)
        };
        ComplexPlanes::new(
            branch(&s.real, &self.norm_real, &self.proj_real)?,
            branch(&s.imag, &self.norm_imag, &self.proj_imag)?,
        )
    }
}

/// Global filtering of `x` by its own purified spectrum:
/// Re(F⁻¹(P(F(x)) ⊙ F(x))). Inputs that are not power-of-two sized are
/// zero-padded before the transform and cropped afterwards.
pub fn global_filter<T: Scalar>(x: &Tensor<T>, purifier: &Purifier<T>, ctx: &Ctx) -> Result<Tensor<T>> {
    let [_, _, h, w] = x.dims4("global_filter")?;
    let spectrum = fft2(&pad_to_pow2(x)?)?;
    let filter = purifier.forward(&spectrum, ctx)?;
    crop(&ifft2(&filter.mul(&spectrum)?)?, h, w)
}

/// The same filtering done in the spatial domain: the dynamic kernel
/// Re(F⁻¹(P(F(x)))) is circularly convolved with `x` by direct summation.
/// Quadratic in the number of pixels; meant for cross-checking only.
pub fn spatial_oracle<T: Scalar>(x: &Tensor<T>, purifier: &Purifier<T>, ctx: &Ctx) -> Result<Tensor<T>> {
    let [b, c, h, w] = x.dims4("spatial_oracle")?;
    let padded = pad_to_pow2(x)?;
    let (hp, wp) = (padded.shape()[2], padded.shape()[3]);
    let kernel = ifft2(&purifier.forward(&fft2(&padded)?, ctx)?)?;
    let (kd, xd) = (kernel.data(), padded.data());
    let plane = hp * wp;
    let mut out = vec![T::zero(); b * c * plane];
    for p in 0..b * c {
        let (k, xs) = (&kd[p * plane..][..plane], &xd[p * plane..][..plane]);
        let o = &mut out[p * plane..][..plane];
        for y in 0..hp {
            for x0 in 0..wp {
                let mut acc = T::zero();
                for m in 0..hp {
                    let sy = (y + hp - m) % hp;
                    for n in 0..wp {
                        acc += k[m * wp + n] * xs[sy * wp + (x0 + wp - n) % wp];
                    }
                }
                o[y * wp + x0] = acc;
            }
        }
    }
    crop(&Tensor::from_vec(&[b, c, hp, wp], out)?, h, w)
}

/// Dual-domain block: a local 3×3 convolution on one channel half and the
/// purified global filter on the other, fused by a point-wise convolution.
/// Every convolution is bias-free, so zero input maps to zero output.
pub struct Dfsp<T: Scalar> {
    pub local: Conv2d<T>,
    pub purifier: Purifier<T>,
    /// Scalar weight on the global branch.
    pub gate: Tensor<T>,
    pub fuse: Conv2d<T>,
    pub dropout: f64,
    pub shuffle: bool,
}

pub struct DfspOptions {
    pub gamma: f64,
    pub dropout: f64,
    pub shuffle: bool,
    pub learnable_mask: bool,
}

impl<T: Scalar> Dfsp<T> {
    /// `h`×`w` is the feature size the block will run at.
    pub fn new(init: &mut Init<'_, T>, name: &str, channels: usize, h: usize, w: usize, opts: &DfspOptions) -> Result<Self> {
        if !channels.is_multiple_of(2) {
            return Err(dim_err!("dual-domain block needs an even channel count, got {channels}"));
        }
        let half = channels / 2;
        let mut sub = init.sub(name);
        Ok(Dfsp {
            local: Conv2d::new(&mut sub, "local", half, half, 3, Conv2dSpec::same(3, 1), false),
            purifier: Purifier::new(&mut sub, "purify", half, h.next_power_of_two(), w.next_power_of_two(), opts.gamma, opts.learnable_mask)?,
            gate: sub.constant("gate", &[1, 1, 1, 1], 1.0),
            fuse: Conv2d::new(&mut sub, "fuse", channels, channels, 1, Conv2dSpec::default(), false),
            dropout: opts.dropout,
            shuffle: opts.shuffle,
        })
    }

    pub fn forward(&self, x: &Tensor<T>, ctx: &Ctx) -> Result<Tensor<T>> {
        let shuffled = if self.shuffle { channel_shuffle(x, 2)? } else { x.clone() };
        let (first, second) = channel_split(&shuffled)?;
        let local = {
            let _s = profile::scope("local");
            self.local.forward(&first)?
        };
        let global = {
            let _s = profile::scope("global");
            global_filter(&second, &self.purifier, ctx)?.mul(&self.gate)?
        };
        let fused = self.fuse.forward(&concat(&[&local, &global], 1)?)?;
        dropout(&fused, self.dropout, ctx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ParamStore;
    use crate::spectral::ifft2_complex;
    use crate::tensor::{grad_check, GradCheckOptions};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    fn purifier(store: &mut ParamStore<f64>, c: usize, n: usize, gamma: f64) -> Purifier<f64> {
        Purifier::new(&mut Init::new(store, 11), "p", c, n, n, gamma, true).unwrap()
    }

    /// Identity projections and a normalization that passes values through
    /// unchanged in eval mode (running mean 0, variance 1, eps 0).
    fn make_transparent(p: &mut Purifier<f64>) {
        for conv in [&p.proj_real, &p.proj_imag] {
            let c = conv.weight.shape()[0];
            let mut wd = conv.weight.data_mut();
            wd.iter_mut().enumerate().for_each(|(i, v)| *v = if i % (c + 1) == 0 { 1.0 } else { 0.0 });
        }
        p.norm_real.eps = 0.0;
        p.norm_imag.eps = 0.0;
    }

    fn gelu(x: f64) -> f64 {
        0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
    }

    fn spectrum(c: usize, n: usize, seed: u64) -> ComplexPlanes<f64> {
        let len = c * n * n;
        ComplexPlanes::new(
            Tensor::from_vec(&[1, c, n, n], random(len, seed)).unwrap(),
            Tensor::from_vec(&[1, c, n, n], random(len, seed + 1)).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn transparent_purifier_is_elementwise_gelu() {
        let mut store = ParamStore::new();
        let mut p = purifier(&mut store, 2, 8, 1.0);
        make_transparent(&mut p);
        let s = spectrum(2, 8, 1);
        let out = p.forward(&s, &Ctx::eval()).unwrap();
        for (o, i) in out.real.to_vec().iter().zip(s.real.to_vec()).chain(out.imag.to_vec().iter().zip(s.imag.to_vec())) {
            assert!((o - gelu(i)).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_cutoff_zeroes_non_dc_before_activation() {
        let mut store = ParamStore::new();
        let mut p = purifier(&mut store, 1, 8, 0.0);
        make_transparent(&mut p);
        let s = spectrum(1, 8, 2);
        let out = p.forward(&s, &Ctx::eval()).unwrap();
        let (re, sre) = (out.real.to_vec(), s.real.to_vec());
        assert!((re[0] - gelu(sre[0])).abs() < 1e-15);
        assert!(re[1..].iter().chain(&out.imag.to_vec()[1..]).all(|&v| v == 0.0));
    }

    #[test]
    fn purifier_matches_straight_line_reimplementation() {
        let (c, n) = (2, 8);
        let mut store = ParamStore::new();
        let p = purifier(&mut store, c, n, 0.5);
        // perturb the mask and affine params so every term matters
        p.mask.mask.data_mut().iter_mut().enumerate().for_each(|(i, v)| *v = 0.25 + 0.5 * *v + 0.01 * (i % 7) as f64);
        p.norm_real.gain.data_mut()[1] = 1.7;
        p.norm_imag.bias.data_mut()[0] = -0.3;
        let s = spectrum(c, n, 3);
        let out = p.forward(&s, &Ctx::train_deterministic()).unwrap();

        let mask = p.mask.mask.to_vec();
        let branch = |plane: Vec<f64>, gain: Vec<f64>, bias: Vec<f64>, w: Vec<f64>| -> Vec<f64> {
            let act: Vec<f64> = plane.iter().zip(&mask).map(|(x, m)| gelu(x * m)).collect();
            let hw = n * n;
            let mut normed = vec![0.0; c * hw];
            for ch in 0..c {
                let sl = &act[ch * hw..][..hw];
                let mean = sl.iter().sum::<f64>() / hw as f64;
                let var = sl.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / hw as f64;
                for i in 0..hw {
                    normed[ch * hw + i] = (sl[i] - mean) / (var + 1e-5).sqrt() * gain[ch] + bias[ch];
                }
            }
            let mut out = vec![0.0; c * hw];
            for o in 0..c {
                for i in 0..c {
                    for k in 0..hw {
                        out[o * hw + k] += w[o * c + i] * normed[i * hw + k];
                    }
                }
            }
            out
        };
        let re = branch(s.real.to_vec(), p.norm_real.gain.to_vec(), p.norm_real.bias.to_vec(), p.proj_real.weight.to_vec());
        let im = branch(s.imag.to_vec(), p.norm_imag.gain.to_vec(), p.norm_imag.bias.to_vec(), p.proj_imag.weight.to_vec());
        for (a, b) in out.real.to_vec().iter().zip(&re).chain(out.imag.to_vec().iter().zip(&im)) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn mask_shape_mismatch() {
        let mut store = ParamStore::new();
        let p = purifier(&mut store, 2, 8, 0.5);
        assert!(matches!(p.forward(&spectrum(2, 4, 1), &Ctx::eval()), Err(crate::Error::Dimension(_))));
    }

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        num / b.iter().map(|y| y * y).sum::<f64>().sqrt()
    }

    #[test]
    fn frequency_path_equals_circular_convolution() {
        for (seed, ctx) in [(1, Ctx::eval()), (2, Ctx::train_deterministic())] {
            let mut store = ParamStore::new();
            let p = purifier(&mut store, 2, 8, 0.5);
            let x = Tensor::<f64>::from_vec(&[1, 2, 8, 8], random(128, seed)).unwrap();
            let fast = global_filter(&x, &p, &ctx).unwrap().to_vec();
            let slow = spatial_oracle(&x, &p, &ctx).unwrap().to_vec();
            assert!(rel_err(&fast, &slow) < 1e-8);
            assert!(rel_err(&slow, &fast) < 1e-8);
        }
    }

    #[test]
    fn padded_sizes_agree_too() {
        let mut store = ParamStore::new();
        let p = Purifier::new(&mut Init::new(&mut store, 3), "p", 1, 8, 8, 0.5, true).unwrap();
        let x = Tensor::<f64>::from_vec(&[1, 1, 6, 5], random(30, 9)).unwrap();
        let fast = global_filter(&x, &p, &Ctx::eval()).unwrap();
        assert_eq!(fast.shape(), &[1, 1, 6, 5]);
        assert!(rel_err(&fast.to_vec(), &spatial_oracle(&x, &p, &Ctx::eval()).unwrap().to_vec()) < 1e-8);
    }

    #[test]
    fn impulse_returns_the_kernel() {
        let mut store = ParamStore::new();
        let p = purifier(&mut store, 1, 8, 0.5);
        let mut v = vec![0.0; 64];
        v[0] = 1.0;
        let x = Tensor::<f64>::from_vec(&[1, 1, 8, 8], v).unwrap();
        let ctx = Ctx::eval();
        let kernel = ifft2(&p.forward(&fft2(&x).unwrap(), &ctx).unwrap()).unwrap().to_vec();
        let out = spatial_oracle(&x, &p, &ctx).unwrap().to_vec();
        assert!(out.iter().zip(&kernel).all(|(a, b)| (a - b).abs() < 1e-14));
    }

    #[test]
    fn constant_input_gives_constant_output() {
        // with a linear purifier a constant field has only a DC component
        let mut store = ParamStore::new();
        let mut p = purifier(&mut store, 1, 8, 1.0);
        make_transparent(&mut p);
        let ctx = Ctx::eval();
        let x = Tensor::<f64>::full(&[1, 1, 8, 8], 0.3);
        let s = fft2(&x).unwrap();
        let filtered = ifft2(&s.mul(&s).unwrap()).unwrap().to_vec();
        assert!(filtered.iter().all(|v| (v - filtered[0]).abs() < 1e-12));
        assert!((filtered[0] - 0.3 * 0.3 * 64.0).abs() < 1e-10);
        let out = global_filter(&x, &p, &ctx).unwrap().to_vec();
        assert!(out.iter().all(|v| (v - out[0]).abs() < 1e-12));
    }

    fn dfsp(store: &mut ParamStore<f64>, c: usize, n: usize, gamma: f64) -> Dfsp<f64> {
        let opts = DfspOptions { gamma, dropout: 0.1, shuffle: true, learnable_mask: true };
        Dfsp::new(&mut Init::new(store, 5), "dfsp", c, n, n, &opts).unwrap()
    }

    #[test]
    fn zero_in_zero_out() {
        let mut store = ParamStore::new();
        let d = dfsp(&mut store, 4, 8, 0.5);
        let y = d.forward(&Tensor::zeros(&[2, 4, 8, 8]), &Ctx::train(1)).unwrap();
        assert_eq!(y.shape(), &[2, 4, 8, 8]);
        assert!(y.to_vec().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_reduction() {
        let n = 8;
        let mut store = ParamStore::new();
        let mut d = dfsp(&mut store, 4, n, 1.0);
        make_transparent(&mut d.purifier);
        let ctx = Ctx::eval();
        let x = Tensor::<f64>::from_vec(&[1, 2, n, n], random(2 * n * n, 4)).unwrap();
        let got = global_filter(&x, &d.purifier, &ctx).unwrap().to_vec();
        // F⁻¹(GELU(S) ⊙ S) with GELU on each plane, evaluated with plain arrays
        let s = fft2(&x).unwrap();
        let (sr, si) = (s.real.to_vec(), s.imag.to_vec());
        let pr: Vec<f64> = sr.iter().zip(&si).map(|(&r, &i)| gelu(r) * r - gelu(i) * i).collect();
        let pi: Vec<f64> = sr.iter().zip(&si).map(|(&r, &i)| gelu(r) * i + gelu(i) * r).collect();
        let prod = ComplexPlanes::new(
            Tensor::from_vec(&[1, 2, n, n], pr).unwrap(),
            Tensor::from_vec(&[1, 2, n, n], pi).unwrap(),
        )
        .unwrap();
        let expect = ifft2_complex(&prod).unwrap().real.to_vec();
        assert!(rel_err(&got, &expect) < 1e-12);
    }

    #[test]
    fn block_gradients() {
        let mut store = ParamStore::new();
        let d = dfsp(&mut store, 4, 16, 0.5);
        let x = Tensor::<f64>::leaf(&[1, 4, 16, 16], random(1024, 8)).unwrap();
        let weight = Tensor::from_vec(&[1, 4, 16, 16], random(1024, 9)).unwrap();
        let mut inputs = vec![x];
        inputs.extend(store.params().iter().map(|p| p.tensor.clone()));
        let f = |_: &[Tensor<f64>]| {
            let y = d.forward(&inputs[0], &Ctx::train_deterministic())?;
            Ok(y.mul(&weight)?.sum())
        };
        let opts = GradCheckOptions { max_coords: Some(40), ..Default::default() };
        let r = grad_check(f, &inputs, &opts).unwrap();
        assert!(r.passed, "{r:?}");
        assert!(r.checked > 100);
    }
}

use super::geometry::{disp_to_depth, project_and_warp, CameraIntrinsics, PoseBatch};
use crate::error::{arg_err, contract_err, dim_err, Result};
use crate::scalar::Scalar;
use crate::tensor::{bilinear_resize, pool2d, PoolMode, PoolWindow, Tensor};

pub const SSIM_C1: f64 = 1e-4;
pub const SSIM_C2: f64 = 9e-4;

fn local_mean<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    pool2d(x, PoolMode::Avg, PoolWindow::Window { size: 3, stride: 1 })
}

/// Per-pixel structural similarity over 3×3 windows with reflection padding.
/// Every step is a commutative operation on (a, b), so `ssim(a, b)` and
/// `ssim(b, a)` agree bit for bit, and `ssim(a, a)` is exactly 1.
pub fn ssim<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.shape() != b.shape() {
        return Err(dim_err!("ssim: shapes {:?} and {:?} differ", a.shape(), b.shape()));
    }
    let (pa, pb) = (a.reflect_pad2d(1)?, b.reflect_pad2d(1)?);
    let (mu_a, mu_b) = (local_mean(&pa)?, local_mean(&pb)?);
    let mu_ab = mu_a.mul(&mu_b)?;
    let var_a = local_mean(&pa.square())?.sub(&mu_a.square())?;
    let var_b = local_mean(&pb.square())?.sub(&mu_b.square())?;
    let cov = local_mean(&pa.mul(&pb)?)?.sub(&mu_ab)?;
    let (c1, c2) = (T::c(SSIM_C1), T::c(SSIM_C2));
    let num = mu_ab.mul_scalar(T::c(2.0)).add_scalar(c1).mul(&cov.mul_scalar(T::c(2.0)).add_scalar(c2))?;
    let den = mu_a.square().add(&mu_b.square())?.add_scalar(c1).mul(&var_a.add(&var_b)?.add_scalar(c2))?;
    num.div(&den)
}

/// α/2·(1 − SSIM) + (1 − α)·|a − b|, averaged over channels: B×1×H×W.
pub fn photometric_error<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, alpha: f64) -> Result<Tensor<T>> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(arg_err!("photometric weight {alpha} outside [0, 1]"));
    }
    let structural = ssim(a, b)?.neg().add_scalar(T::one()).mul_scalar(T::c(alpha / 2.0));
    let absolute = a.sub(b)?.abs().mul_scalar(T::c(1.0 - alpha));
    structural.add(&absolute)?.mean_axes(&[1])
}

/// Per-pixel minimum over the per-source errors.
pub fn min_reprojection<T: Scalar>(errors: &[Tensor<T>]) -> Result<Tensor<T>> {
    Tensor::minimum(errors)
}

/// 1 where the best warped error is strictly below the best error of the
/// unwarped sources, else 0 (ties mask the pixel out). Not differentiable.
pub fn auto_mask<T: Scalar>(warped: &[Tensor<T>], identity: &[Tensor<T>]) -> Result<Tensor<T>> {
    let w = min_reprojection(warped)?;
    let i = min_reprojection(identity)?;
    if w.shape() != i.shape() {
        return Err(dim_err!("auto_mask: shapes {:?} and {:?} differ", w.shape(), i.shape()));
    }
    let flags = w.data().iter().zip(i.data().iter()).map(|(a, b)| if a < b { T::one() } else { T::zero() }).collect();
    Tensor::from_vec(w.shape(), flags)
}

/// Edge-aware smoothness of the per-image mean-normalized disparity `disp`
/// (B×1×H×W) against `image` (B×C×H×W):
/// mean |∂x d*|·exp(−|∂x I|) + mean |∂y d*|·exp(−|∂y I|), with image
/// gradients averaged over channels.
pub fn smoothness_loss<T: Scalar>(disp: &Tensor<T>, image: &Tensor<T>) -> Result<Tensor<T>> {
    let [b, c, h, w] = disp.dims4("smoothness disparity")?;
    let [bi, _, hi, wi] = image.dims4("smoothness image")?;
    if c != 1 || (b, h, w) != (bi, hi, wi) {
        return Err(dim_err!("smoothness: disparity {:?} does not match image {:?}", disp.shape(), image.shape()));
    }
    if h < 2 || w < 2 {
        return Err(dim_err!("smoothness needs at least 2x2 pixels, got {h}x{w}"));
    }
    let mean = disp.mean_axes(&[1, 2, 3])?;
    if let Some(n) = mean.data().iter().position(|&m| m == T::zero() || !m.is_finite()) {
        return Err(contract_err!("smoothness: image {n} has zero or non-finite mean disparity"));
    }
    let d = disp.div(&mean)?;
    let dx = |t: &Tensor<T>| -> Result<Tensor<T>> { t.narrow(3, 1, w - 1)?.sub(&t.narrow(3, 0, w - 1)?) };
    let dy = |t: &Tensor<T>| -> Result<Tensor<T>> { t.narrow(2, 1, h - 1)?.sub(&t.narrow(2, 0, h - 1)?) };
    let weight = |g: Tensor<T>| -> Result<Tensor<T>> { Ok(g.abs().mean_axes(&[1])?.neg().exp()) };
    let gx = dx(&d)?.abs().mul(&weight(dx(image)?)?)?.mean();
    let gy = dy(&d)?.abs().mul(&weight(dy(image)?)?)?.mean();
    gx.add(&gy)
}

#[derive(Clone, Debug)]
pub struct LossSettings {
    /// Weight of the SSIM part of the photometric error.
    pub alpha: f64,
    /// Weight of the smoothness term.
    pub smoothness: f64,
    pub min_depth: f64,
    pub max_depth: f64,
}

impl Default for LossSettings {
    fn default() -> Self {
        LossSettings { alpha: 0.85, smoothness: 1e-3, min_depth: 0.1, max_depth: 100.0 }
    }
}

/// One training example batch seen by the loss.
pub struct LossInputs<'a, T: Scalar> {
    /// B×3×H×W.
    pub target: &'a Tensor<T>,
    /// Adjacent frames, each B×3×H×W.
    pub sources: &'a [Tensor<T>],
    /// Target-to-source motion for each source.
    pub poses: &'a [PoseBatch<T>],
    /// Predicted disparities, finest first, each B×1×(H/2^s)×(W/2^s).
    pub disparities: &'a [Tensor<T>],
    /// Intrinsics at full resolution, one per batch element.
    pub intrinsics: &'a [CameraIntrinsics],
}

pub struct LossReport<T: Scalar> {
    /// Differentiable scalar.
    pub total: Tensor<T>,
    /// Mean over scales of the masked photometric term.
    pub photometric: f64,
    /// Mean over scales of the smoothness term (unweighted).
    pub smoothness: f64,
    /// Mean over scales of the fraction of pixels kept by the auto-mask.
    pub mask_fraction: f64,
}

/// Added to the error of pixels that reproject outside a source so that any
/// valid source wins the minimum.
const INVALID_PENALTY: f64 = 1e3;

/// Self-supervised objective averaged over scales: the auto-masked minimum
/// reprojection error (disparities upsampled to full resolution) plus the
/// weighted smoothness of each native-scale disparity against the image
/// average-pooled to that scale. The photometric average runs over pixels
/// with at least one valid source.
pub fn total_loss<T: Scalar>(inputs: &LossInputs<'_, T>, settings: &LossSettings) -> Result<LossReport<T>> {
    let [b, _, h, w] = inputs.target.dims4("loss target")?;
    if inputs.sources.is_empty() || inputs.sources.len() != inputs.poses.len() {
        return Err(arg_err!("need one pose per source and at least one source"));
    }
    if inputs.disparities.is_empty() {
        return Err(arg_err!("need at least one disparity scale"));
    }
    let identity: Vec<Tensor<T>> =
        inputs.sources.iter().map(|s| photometric_error(s, inputs.target, settings.alpha)).collect::<Result<_>>()?;
    let scales = inputs.disparities.len();
    let mut total: Option<Tensor<T>> = None;
    let (mut photo_sum, mut smooth_sum, mut mask_sum) = (0.0, 0.0, 0.0);
    for (s, disp) in inputs.disparities.iter().enumerate() {
        let [_, _, hs, ws] = disp.dims4("disparity")?;
        if (hs << s, ws << s) != (h, w) {
            return Err(dim_err!("disparity {s} is {hs}x{ws}, expected {}x{}", h >> s, w >> s));
        }
        let full = if s == 0 { disp.clone() } else { bilinear_resize(disp, h, w)? };
        let depth = disp_to_depth(&full, settings.min_depth, settings.max_depth)?;
        let mut warped = Vec::with_capacity(inputs.sources.len());
        let mut any_valid = vec![false; b * h * w];
        for (source, pose) in inputs.sources.iter().zip(inputs.poses) {
            let warp = project_and_warp(source, &depth, pose, inputs.intrinsics)?;
            let valid = warp.valid.to_vec();
            let penalty = Tensor::from_vec(
                &[b, 1, h, w],
                valid.iter().map(|&m| T::c(INVALID_PENALTY) * (T::one() - m)).collect(),
            )?;
            for (flag, m) in any_valid.iter_mut().zip(&valid) {
                *flag |= *m > T::zero();
            }
            warped.push(photometric_error(&warp.image, inputs.target, settings.alpha)?.add(&penalty)?);
        }
        let mask = auto_mask(&warped, &identity)?;
        let keep: Vec<T> =
            mask.data().iter().zip(&any_valid).map(|(&m, &v)| if v { m } else { T::zero() }).collect();
        let valid_count = any_valid.iter().filter(|&&v| v).count().max(1);
        mask_sum += keep.iter().filter(|&&m| m > T::zero()).count() as f64 / keep.len() as f64;
        let keep = Tensor::from_vec(&[b, 1, h, w], keep)?;
        let photometric = min_reprojection(&warped)?.mul(&keep)?.sum().mul_scalar(T::c(1.0 / valid_count as f64));
        let image = if s == 0 {
            inputs.target.clone()
        } else {
            pool2d(inputs.target, PoolMode::Avg, PoolWindow::Window { size: 1 << s, stride: 1 << s })?
        };
        let smooth = smoothness_loss(disp, &image)?;
        photo_sum += photometric.item().f64();
        smooth_sum += smooth.item().f64();
        let term = photometric.add(&smooth.mul_scalar(T::c(settings.smoothness)))?;
        total = Some(match total {
            Some(t) => t.add(&term)?,
            None => term,
        });
    }
    let n = scales as f64;
    Ok(LossReport {
        total: total.expect("at least one scale").mul_scalar(T::c(1.0 / n)),
        photometric: photo_sum / n,
        smoothness: smooth_sum / n,
        mask_fraction: mask_sum / n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::depth::geometry::Pose;
    use crate::tensor::{grad_check, GradCheckOptions};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap()
    }

    /// Plain-loop SSIM over reflect-padded 3×3 windows.
    fn ssim_oracle(a: &[f64], b: &[f64], h: usize, w: usize) -> Vec<f64> {
        let refl = |i: isize, n: usize| -> usize {
            let n = n as isize;
            (if i < 0 { -i } else if i >= n { 2 * (n - 1) - i } else { i }) as usize
        };
        let mut out = Vec::with_capacity(h * w);
        for y in 0..h as isize {
            for x in 0..w as isize {
                let (mut sa, mut sb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for dy in -1..=1 {
                    for dx in -1..=1 {
                        let i = refl(y + dy, h) * w + refl(x + dx, w);
                        sa += a[i];
                        sb += b[i];
                        saa += a[i] * a[i];
                        sbb += b[i] * b[i];
                        sab += a[i] * b[i];
                    }
                }
                let (ma, mb) = (sa / 9.0, sb / 9.0);
                let (va, vb, cab) = (saa / 9.0 - ma * ma, sbb / 9.0 - mb * mb, sab / 9.0 - ma * mb);
                out.push(((2.0 * ma * mb + SSIM_C1) * (2.0 * cab + SSIM_C2)) / ((ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2)));
            }
        }
        out
    }

    #[test]
    fn ssim_matches_loop_oracle() {
        let (a, b) = (random(&[1, 1, 7, 9], 1), random(&[1, 1, 7, 9], 2));
        let got = ssim(&a, &b).unwrap().to_vec();
        let want = ssim_oracle(&a.to_vec(), &b.to_vec(), 7, 9);
        assert!(got.iter().zip(&want).all(|(g, w)| (g - w).abs() < 1e-12));
    }

    #[test]
    fn photometric_error_of_identical_images_is_zero() {
        let a = random(&[2, 3, 8, 8], 3);
        let e = photometric_error(&a, &a, 0.85).unwrap();
        assert_eq!(e.shape(), &[2, 1, 8, 8]);
        assert!(e.to_vec().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn ssim_is_bit_symmetric() {
        let (a, b) = (random(&[2, 3, 6, 10], 4), random(&[2, 3, 6, 10], 5));
        assert_eq!(ssim(&a, &b).unwrap().to_vec(), ssim(&b, &a).unwrap().to_vec());
        assert_eq!(
            photometric_error(&a, &b, 0.85).unwrap().to_vec(),
            photometric_error(&b, &a, 0.85).unwrap().to_vec()
        );
    }

    #[test]
    fn pure_l1_when_alpha_is_zero() {
        let (a, b) = (random(&[1, 3, 5, 5], 6), random(&[1, 3, 5, 5], 7));
        let e = photometric_error(&a, &b, 0.0).unwrap().to_vec();
        let (av, bv) = (a.to_vec(), b.to_vec());
        for (p, &ep) in e.iter().enumerate() {
            let want = (0..3).map(|c| (av[c * 25 + p] - bv[c * 25 + p]).abs()).sum::<f64>() / 3.0;
            assert!((ep - want).abs() < 1e-15);
        }
        assert!(photometric_error(&a, &b, 1.5).is_err());
    }

    #[test]
    fn auto_mask_breaks_ties_toward_masking() {
        let w = Tensor::<f64>::from_vec(&[1, 1, 1, 4], vec![0.1, 0.5, 0.3, 0.2]).unwrap();
        let i = Tensor::<f64>::from_vec(&[1, 1, 1, 4], vec![0.2, 0.4, 0.3, 0.25]).unwrap();
        assert_eq!(auto_mask(&[w], &[i]).unwrap().to_vec(), vec![1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn smoothness_of_ramp_on_flat_image() {
        let (h, w, a, s) = (5, 8, 0.2, 0.03);
        let disp = Tensor::<f64>::from_vec(&[1, 1, h, w], (0..h * w).map(|i| a + s * (i % w) as f64).collect()).unwrap();
        let image = Tensor::full(&[1, 3, h, w], 0.4);
        let got = smoothness_loss(&disp, &image).unwrap().item();
        let mean = a + s * (w - 1) as f64 / 2.0;
        assert!((got - s / mean).abs() < 1e-12, "{got}");
    }

    #[test]
    fn smoothness_rejects_zero_mean() {
        let disp = Tensor::<f64>::zeros(&[1, 1, 4, 4]);
        assert!(matches!(smoothness_loss(&disp, &Tensor::zeros(&[1, 3, 4, 4])), Err(crate::Error::Contract(_))));
    }

    #[test]
    fn smoothness_gradients() {
        let disp = Tensor::<f64>::leaf(&[1, 1, 5, 6], random(&[1, 1, 5, 6], 8).to_vec().iter().map(|v| v + 0.1).collect()).unwrap();
        let image = random(&[1, 3, 5, 6], 9);
        let r = grad_check(|v| smoothness_loss(&v[0], &image), &[disp], &GradCheckOptions::default()).unwrap();
        assert!(r.passed, "{r:?}");
    }

    #[test]
    fn photometric_gradients() {
        let a = Tensor::<f64>::leaf(&[1, 2, 5, 5], random(&[1, 2, 5, 5], 10).to_vec()).unwrap();
        let b = random(&[1, 2, 5, 5], 11);
        let r = grad_check(|v| Ok(photometric_error(&v[0], &b, 0.85)?.sum()), &[a], &GradCheckOptions::default()).unwrap();
        assert!(r.passed, "{r:?}");
    }

    #[test]
    fn ssim_of_black_against_white() {
        let (a, b) = (Tensor::<f64>::zeros(&[1, 1, 4, 4]), Tensor::full(&[1, 1, 4, 4], 1.0));
        let want = SSIM_C1 / (1.0 + SSIM_C1);
        assert!(ssim(&a, &b).unwrap().to_vec().iter().all(|v| (v - want).abs() < 1e-15));
        assert!(ssim(&a, &Tensor::zeros(&[1, 1, 4, 5])).is_err());
    }

    #[test]
    fn photometric_error_composes_ssim_and_l1() {
        let (a, b) = (random(&[1, 3, 6, 6], 30), random(&[1, 3, 6, 6], 31));
        let alpha = 0.85;
        let got = photometric_error(&a, &b, alpha).unwrap().to_vec();
        let (av, bv) = (a.to_vec(), b.to_vec());
        let per_channel: Vec<Vec<f64>> =
            (0..3).map(|c| ssim_oracle(&av[c * 36..][..36], &bv[c * 36..][..36], 6, 6)).collect();
        for p in 0..36 {
            let want = (0..3)
                .map(|c| alpha / 2.0 * (1.0 - per_channel[c][p]) + (1.0 - alpha) * (av[c * 36 + p] - bv[c * 36 + p]).abs())
                .sum::<f64>()
                / 3.0;
            assert!((got[p] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn min_reprojection_example() {
        let a = Tensor::<f64>::from_vec(&[1, 1, 2, 2], vec![1.0, 5.0, 2.0, 0.0]).unwrap();
        let b = Tensor::<f64>::from_vec(&[1, 1, 2, 2], vec![3.0, 1.0, 2.0, 4.0]).unwrap();
        assert_eq!(min_reprojection(&[a.clone(), b]).unwrap().to_vec(), vec![1.0, 1.0, 2.0, 0.0]);
        assert_eq!(min_reprojection(std::slice::from_ref(&a)).unwrap().to_vec(), a.to_vec());
        assert!(matches!(min_reprojection::<f64>(&[]), Err(crate::Error::Argument(_))));
    }

    #[test]
    fn auto_mask_extremes_and_oracle() {
        let zero = Tensor::<f64>::zeros(&[1, 1, 3, 3]);
        let pos = Tensor::<f64>::full(&[1, 1, 3, 3], 0.2);
        assert!(auto_mask(std::slice::from_ref(&zero), &[pos]).unwrap().to_vec().iter().all(|&m| m == 1.0));
        assert!(auto_mask(std::slice::from_ref(&zero), std::slice::from_ref(&zero)).unwrap().to_vec().iter().all(|&m| m == 0.0));
        let w = [random(&[2, 1, 5, 5], 40), random(&[2, 1, 5, 5], 41)];
        let i = [random(&[2, 1, 5, 5], 42), random(&[2, 1, 5, 5], 43)];
        let mask = auto_mask(&w, &i).unwrap().to_vec();
        let (w0, w1, i0, i1) = (w[0].to_vec(), w[1].to_vec(), i[0].to_vec(), i[1].to_vec());
        for p in 0..50 {
            let expect = w0[p].min(w1[p]) < i0[p].min(i1[p]);
            assert_eq!(mask[p], if expect { 1.0 } else { 0.0 });
        }
    }

    #[test]
    fn smoothness_zero_for_constant_and_scale_invariant() {
        let image = random(&[2, 3, 6, 7], 50);
        assert_eq!(smoothness_loss(&Tensor::full(&[2, 1, 6, 7], 0.3), &image).unwrap().item(), 0.0);
        let disp = random(&[2, 1, 6, 7], 51).add_scalar(0.01);
        let base = smoothness_loss(&disp, &image).unwrap().item();
        for c in [0.5, 3.0, 1e-3] {
            let scaled = smoothness_loss(&disp.mul_scalar(c), &image).unwrap().item();
            assert!((scaled - base).abs() < 1e-12);
        }
    }

    fn intrinsics(n: usize) -> Vec<CameraIntrinsics> {
        vec![CameraIntrinsics::new(18.0, 18.0, 15.5, 7.5).unwrap(); n]
    }

    #[test]
    fn identical_frames_with_identity_motion_have_zero_photometric_term() {
        let img = random(&[1, 3, 16, 32], 12);
        let disp: Vec<_> = (0..3).map(|s| random(&[1, 1, 16 >> s, 32 >> s], 13 + s as u64).add_scalar(0.05)).collect();
        let poses = vec![PoseBatch::from_poses(&[Pose::identity()]).unwrap(); 2];
        let sources = vec![img.clone(), img.clone()];
        let k = intrinsics(1);
        let inputs = LossInputs { target: &img, sources: &sources, poses: &poses, disparities: &disp, intrinsics: &k };
        let report = total_loss(&inputs, &LossSettings::default()).unwrap();
        assert!(report.photometric.abs() < 1e-9);
        assert!((report.total.item() - 1e-3 * report.smoothness).abs() < 1e-9);
    }

    #[test]
    fn without_smoothness_weight_total_is_photometric() {
        let target = random(&[1, 3, 16, 32], 60);
        let sources = vec![random(&[1, 3, 16, 32], 61), random(&[1, 3, 16, 32], 62)];
        let disp: Vec<_> = (0..2).map(|s| random(&[1, 1, 16 >> s, 32 >> s], 63 + s as u64).add_scalar(0.05)).collect();
        let poses = vec![
            PoseBatch::from_poses(&[Pose::from_vector([0.0, 0.01, 0.0, 0.1, 0.0, 0.0])]).unwrap(),
            PoseBatch::from_poses(&[Pose::from_vector([0.0, -0.01, 0.0, -0.1, 0.0, 0.0])]).unwrap(),
        ];
        let k = intrinsics(1);
        let inputs = LossInputs { target: &target, sources: &sources, poses: &poses, disparities: &disp, intrinsics: &k };
        let settings = LossSettings { smoothness: 0.0, ..LossSettings::default() };
        let report = total_loss(&inputs, &settings).unwrap();
        assert!((report.total.item() - report.photometric).abs() < 1e-12);
        assert!(report.photometric > 0.0 && report.smoothness > 0.0);
        assert!((0.0..=1.0).contains(&report.mask_fraction));
    }

    #[test]
    fn loss_gradients_reach_disparity_and_pose() {
        let target = random(&[1, 3, 8, 16], 20);
        let sources = vec![random(&[1, 3, 8, 16], 21)];
        let k = vec![CameraIntrinsics::new(9.0, 9.0, 7.5, 3.5).unwrap()];
        let disp = Tensor::<f64>::leaf(&[1, 1, 8, 16], random(&[1, 1, 8, 16], 22).to_vec().iter().map(|v| 0.2 + 0.5 * v).collect()).unwrap();
        let pose = Tensor::<f64>::leaf(&[1, 6], vec![0.01, 0.02, -0.01, 0.05, 0.0, 0.02]).unwrap();
        let f = |v: &[Tensor<f64>]| {
            let poses = vec![PoseBatch::from_vector(&v[1])?];
            let disparities = [v[0].clone()];
            let inputs = LossInputs { target: &target, sources: &sources, poses: &poses, disparities: &disparities, intrinsics: &k };
            Ok::<_, crate::Error>(total_loss(&inputs, &LossSettings::default())?.total)
        };
        disp.zero_grad();
        pose.zero_grad();
        f(&[disp.clone(), pose.clone()]).unwrap().backward().unwrap();
        assert!(disp.grad().unwrap().iter().any(|&g| g != 0.0));
        assert!(pose.grad().unwrap().iter().any(|&g| g != 0.0));
    }
}

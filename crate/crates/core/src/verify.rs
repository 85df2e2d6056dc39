//! Self-contained property suite behind the `verify` command.
//!
//! Every check builds its own random inputs from the suite seed, so a run is
//! reproducible and needs no files or network.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bench::count_params;
use crate::config::{Ablation, ModelConfig};
use crate::depth::{
    photometric_error, project_and_warp, smoothness_loss, ssim, total_loss, CameraIntrinsics, LossInputs, LossSettings, Model,
    PoseBatch,
};
use crate::encoder::Raka;
use crate::error::Result;
use crate::nn::{Ctx, Init, ParamStore};
use crate::spectral::{fft2, global_filter, ifft2, spatial_oracle, Purifier};
use crate::tensor::{
    batch_norm, channel_shuffle, conv2d, grad_check, layer_norm, pool2d, sample_bilinear, Conv2dSpec, GradCheckOptions, PoolMode,
    PoolWindow, Tensor,
};
use crate::training::{eigen_metrics, EvalSettings};

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} ({})", if self.passed { "PASS" } else { "FAIL" }, self.name, self.detail)
    }
}

fn record(name: &str, outcome: Result<(bool, String)>) -> CheckResult {
    let (passed, detail) = outcome.unwrap_or_else(|e| (false, format!("error: {e}")));
    CheckResult { name: name.to_string(), passed, detail }
}

struct Rand(ChaCha8Rng);

impl Rand {
    fn values(&mut self, n: usize, lo: f64, hi: f64) -> Vec<f64> {
        (0..n).map(|_| self.0.gen_range(lo..hi)).collect()
    }

    fn tensor(&mut self, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
        Tensor::from_vec(shape, self.values(shape.iter().product(), lo, hi)).expect("shape matches data")
    }

    fn leaf(&mut self, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
        Tensor::leaf(shape, self.values(shape.iter().product(), lo, hi)).expect("shape matches data")
    }
}

/// Direct O(N²) 2-D DFT of one real plane.
pub fn naive_dft(x: &[f64], h: usize, w: usize) -> (Vec<f64>, Vec<f64>) {
    let (mut re, mut im) = (vec![0.0; h * w], vec![0.0; h * w]);
    for u in 0..h {
        for v in 0..w {
            for y in 0..h {
                for z in 0..w {
                    let phase = -std::f64::consts::TAU * ((u * y) as f64 / h as f64 + (v * z) as f64 / w as f64);
                    re[u * w + v] += x[y * w + z] * phase.cos();
                    im[u * w + v] += x[y * w + z] * phase.sin();
                }
            }
        }
    }
    (re, im)
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn fft_checks(rng: &mut Rand) -> Vec<CheckResult> {
    let x = rng.tensor(&[1, 1, 16, 16], -1.0, 1.0);
    let forward = || -> Result<(bool, String)> {
        let s = fft2(&x)?;
        let (re, im) = naive_dft(&x.to_vec(), 16, 16);
        let err = max_abs_diff(&s.real.to_vec(), &re).max(max_abs_diff(&s.imag.to_vec(), &im));
        Ok((err < 1e-10, format!("max error {err:.2e}")))
    };
    let round_trip = || -> Result<(bool, String)> {
        let err = max_abs_diff(&ifft2(&fft2(&x)?)?.to_vec(), &x.to_vec());
        Ok((err < 1e-10, format!("max error {err:.2e}")))
    };
    vec![record("fft2 matches direct DFT", forward()), record("ifft2 inverts fft2", round_trip())]
}

fn spectral_equivalence(rng: &mut Rand) -> CheckResult {
    let mut run = || -> Result<(bool, String)> {
        let mut worst: f64 = 0.0;
        for trial in 0..20 {
            let mut store = ParamStore::new();
            let purifier = Purifier::new(&mut Init::new(&mut store, trial), "p", 2, 8, 8, 0.5, true)?;
            let x = rng.tensor(&[1, 2, 8, 8], -1.0, 1.0);
            let ctx = Ctx::train_deterministic();
            let fast = global_filter(&x, &purifier, &ctx)?.to_vec();
            let slow = spatial_oracle(&x, &purifier, &ctx)?.to_vec();
            let scale = slow.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
            worst = worst.max(max_abs_diff(&fast, &slow) / scale);
        }
        Ok((worst < 1e-8, format!("worst relative error {worst:.2e} over 20 inputs")))
    };
    record("frequency filter equals circular convolution", run())
}

fn pose_leaf(v: [f64; 6]) -> Tensor<f64> {
    Tensor::leaf(&[1, 6], v.to_vec()).expect("six values")
}

type Scalarize = Box<dyn Fn(&[Tensor<f64>]) -> Result<Tensor<f64>>>;

fn gradient_checks(rng: &mut Rand) -> Vec<CheckResult> {
    let opts = GradCheckOptions { max_coords: Some(48), ..Default::default() };
    let mut cases: Vec<(&str, Vec<Tensor<f64>>, Scalarize)> = Vec::new();

    let probe = rng.tensor(&[1, 4, 6, 6], -1.0, 1.0);
    let spec = Conv2dSpec { stride: 1, dilation: 2, groups: 2, padding: 2 };
    cases.push((
        "conv2d (dilated, grouped)",
        vec![rng.leaf(&[1, 4, 6, 6], -1.0, 1.0), rng.leaf(&[4, 2, 3, 3], -1.0, 1.0), rng.leaf(&[4], -1.0, 1.0)],
        Box::new(move |v| Ok(conv2d(&v[0], &v[1], Some(&v[2]), spec)?.mul(&probe)?.sum())),
    ));
    let probe = rng.tensor(&[1, 4, 3, 3], -1.0, 1.0);
    cases.push((
        "channel shuffle",
        vec![rng.leaf(&[1, 4, 3, 3], -1.0, 1.0)],
        Box::new(move |v| Ok(channel_shuffle(&v[0], 2)?.mul(&probe)?.sum())),
    ));
    let probe = rng.tensor(&[1, 2, 3, 3], -1.0, 1.0);
    cases.push((
        "average and max pooling",
        vec![rng.leaf(&[1, 2, 6, 6], -1.0, 1.0)],
        Box::new(move |v| {
            let win = PoolWindow::Window { size: 2, stride: 2 };
            let a = pool2d(&v[0], PoolMode::Avg, win)?;
            let m = pool2d(&v[0], PoolMode::Max, win)?;
            Ok(a.add(&m.square())?.mul(&probe)?.sum())
        }),
    ));
    let probe = rng.tensor(&[2, 3, 4, 4], -1.0, 1.0);
    cases.push((
        "batch and layer normalization",
        vec![rng.leaf(&[2, 3, 4, 4], -1.0, 1.0), rng.leaf(&[3], 0.5, 1.5), rng.leaf(&[3], -0.5, 0.5)],
        Box::new(move |v| {
            let b = batch_norm(&v[0], &v[1], &v[2], 1e-5, None, true)?;
            let l = layer_norm(&v[0], &v[1], &v[2], 1e-5)?;
            Ok(b.add(&l.mul(&b)?)?.mul(&probe)?.sum())
        }),
    ));
    let probe = rng.tensor(&[1, 2, 4, 4], -1.0, 1.0);
    cases.push((
        "activations",
        vec![rng.leaf(&[1, 2, 4, 4], -2.0, 2.0)],
        Box::new(move |v| {
            let x = &v[0];
            Ok(x.leaky_relu(0.01).add(&x.gelu())?.add(&x.sigmoid())?.mul(&probe)?.sum())
        }),
    ));
    let mut store = ParamStore::new();
    let purifier = Purifier::new(&mut Init::new(&mut store, 5), "p", 2, 8, 8, 0.5, true).expect("8x8 spectrum is a valid size");
    let probe = rng.tensor(&[1, 2, 8, 8], -1.0, 1.0);
    let mut spectral_inputs = vec![rng.leaf(&[1, 2, 8, 8], -1.0, 1.0)];
    spectral_inputs.extend(store.params().iter().map(|p| p.tensor.clone()));
    let filter_inputs = spectral_inputs.clone();
    cases.push((
        "frequency path",
        spectral_inputs,
        Box::new(move |_| Ok(global_filter(&filter_inputs[0], &purifier, &Ctx::train_deterministic())?.mul(&probe)?.sum())),
    ));
    let probe = rng.tensor(&[1, 2, 3, 4], -1.0, 1.0);
    cases.push((
        "bilinear sampling",
        vec![rng.leaf(&[1, 2, 5, 6], -1.0, 1.0), rng.leaf(&[1, 1, 3, 4], 0.3, 4.6), rng.leaf(&[1, 1, 3, 4], 0.3, 3.6)],
        Box::new(move |v| Ok(sample_bilinear(&v[0], &v[1], &v[2])?.mul(&probe)?.sum())),
    ));
    let k = CameraIntrinsics { fx: 6.0, fy: 6.0, cx: 3.0, cy: 2.5 };
    cases.push((
        "projection and warping",
        vec![rng.leaf(&[1, 1, 6, 7], 0.0, 1.0), rng.leaf(&[1, 1, 6, 7], 2.0, 4.0), pose_leaf([0.02, -0.01, 0.03, 0.11, -0.07, 0.05])],
        Box::new(move |v| {
            let out = project_and_warp(&v[0], &v[1], &PoseBatch::from_vector(&v[2])?, &[k])?;
            Ok(out.image.mul(&out.valid)?.square().sum())
        }),
    ));
    let other = rng.tensor(&[1, 2, 5, 5], 0.0, 1.0);
    let other2 = other.clone();
    cases.push(("SSIM", vec![rng.leaf(&[1, 2, 5, 5], 0.0, 1.0)], Box::new(move |v| Ok(ssim(&v[0], &other)?.sum()))));
    cases.push((
        "photometric error",
        vec![rng.leaf(&[1, 2, 5, 5], 0.0, 1.0)],
        Box::new(move |v| Ok(photometric_error(&v[0], &other2, 0.85)?.sum())),
    ));
    let image = rng.tensor(&[1, 3, 5, 6], 0.0, 1.0);
    cases.push(("smoothness", vec![rng.leaf(&[1, 1, 5, 6], 0.1, 1.1)], Box::new(move |v| smoothness_loss(&v[0], &image))));
    let target = rng.tensor(&[1, 3, 8, 16], 0.0, 1.0);
    let sources = vec![rng.tensor(&[1, 3, 8, 16], 0.0, 1.0)];
    let k = vec![CameraIntrinsics { fx: 9.0, fy: 9.0, cx: 7.5, cy: 3.5 }];
    cases.push((
        "total loss",
        vec![rng.leaf(&[1, 1, 8, 16], 0.2, 0.7), pose_leaf([0.01, 0.02, -0.01, 0.05, 0.0, 0.02])],
        Box::new(move |v| {
            let poses = vec![PoseBatch::from_vector(&v[1])?];
            let disparities = [v[0].clone()];
            let inputs = LossInputs { target: &target, sources: &sources, poses: &poses, disparities: &disparities, intrinsics: &k };
            Ok(total_loss(&inputs, &LossSettings::default())?.total)
        }),
    ));

    cases
        .into_iter()
        .map(|(name, inputs, f)| {
            let outcome = grad_check(|v| f(v), &inputs, &opts)
                .map(|r| (r.passed, format!("max relative error {:.2e} over {} coordinates", r.max_rel_error, r.checked)));
            record(&format!("gradient: {name}"), outcome)
        })
        .collect()
}

fn loss_zero_cases(rng: &mut Rand) -> Vec<CheckResult> {
    let image = rng.tensor(&[1, 3, 8, 10], 0.0, 1.0);
    let disp = rng.tensor(&[1, 1, 8, 10], 0.1, 0.9);
    let pe = || -> Result<(bool, String)> {
        let max = photometric_error(&image, &image, 0.85)?.to_vec().into_iter().fold(0.0f64, f64::max);
        Ok((max == 0.0, format!("max {max:e}")))
    };
    let warp = || -> Result<(bool, String)> {
        let k = CameraIntrinsics::new(8.0, 8.0, 4.5, 3.5)?;
        let out = project_and_warp(&image, &rng_depth(&disp)?, &PoseBatch::from_poses(&[crate::depth::Pose::identity()])?, &[k])?;
        let err = max_abs_diff(&out.image.to_vec(), &image.to_vec());
        Ok((err < 1e-9, format!("max error {err:.2e}")))
    };
    let constant = || -> Result<(bool, String)> {
        let s = smoothness_loss(&Tensor::full(&[1, 1, 8, 10], 0.3), &image)?.item();
        Ok((s == 0.0, format!("{s:e}")))
    };
    let scaling = || -> Result<(bool, String)> {
        let a = smoothness_loss(&disp, &image)?.item();
        let b = smoothness_loss(&disp.mul_scalar(7.3), &image)?.item();
        Ok(((a - b).abs() <= 1e-12, format!("difference {:.2e}", (a - b).abs())))
    };
    vec![
        record("photometric error of identical images is zero", pe()),
        record("identity pose reproduces the source", warp()),
        record("constant disparity has zero smoothness", constant()),
        record("smoothness is scale invariant", scaling()),
    ]
}

fn rng_depth(disp: &Tensor<f64>) -> Result<Tensor<f64>> {
    crate::depth::disp_to_depth(disp, 0.1, 100.0)
}

fn raka_identity(rng: &mut Rand) -> CheckResult {
    let mut run = || -> Result<(bool, String)> {
        let mut store = ParamStore::new();
        let raka = Raka::<f64>::new(&mut Init::new(&mut store, 3), "r", 8, 1.0 / 3.0);
        for c in &raka.convs {
            c.weight.data_mut().iter_mut().for_each(|v| *v = 0.0);
            if let Some(b) = &c.bias {
                b.data_mut().iter_mut().for_each(|v| *v = 0.0);
            }
        }
        let x = rng.tensor(&[2, 8, 8, 8], -1.0, 1.0);
        let half: Vec<f64> = x.to_vec().iter().map(|v| 0.5 * v).collect();
        let err = max_abs_diff(&raka.forward(&x)?.to_vec(), &half);
        Ok((err <= 1e-12, format!("max error {err:.2e}")))
    };
    record("rotation attention starts as half identity", run())
}

fn ablation_isolation() -> CheckResult {
    let run = || -> Result<(bool, String)> {
        let count = |a: Option<Ablation>| -> Result<usize> {
            let model = Model::<f32>::new(&ModelConfig::default().with_ablation(a))?;
            Ok(count_params(&model.store))
        };
        let full = count(None)?;
        let (sdc, raka, dfsp) = (count(Some(Ablation::AdjustSdc))?, count(Some(Ablation::NoRaka))?, count(Some(Ablation::NoDfsp))?);
        Ok((dfsp < full && raka < full && sdc == full, format!("full {full}, sdc {sdc}, raka {raka}, dfsp {dfsp}")))
    };
    record("ablations change parameter counts as expected", run())
}

fn perfect_metrics(rng: &mut Rand) -> CheckResult {
    let gt = rng.values(200, 0.5, 79.0);
    let outcome = eigen_metrics(&gt, &gt, &EvalSettings::default())
        .map(|m| (m.as_array() == [0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0], format!("{:?}", m.as_array())));
    record("metrics of a perfect prediction", outcome)
}

/// Runs every check. Results are listed in a fixed order.
pub fn run_all(seed: u64) -> Vec<CheckResult> {
    let mut rng = Rand(ChaCha8Rng::seed_from_u64(seed));
    let mut out = fft_checks(&mut rng);
    out.push(spectral_equivalence(&mut rng));
    out.extend(gradient_checks(&mut rng));
    out.extend(loss_zero_cases(&mut rng));
    out.push(raka_identity(&mut rng));
    out.push(ablation_isolation());
    out.push(perfect_metrics(&mut rng));
    out
}

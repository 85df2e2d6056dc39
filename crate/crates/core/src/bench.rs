//! Parameter and operation accounting, and the spectral-versus-attention
//! scaling benchmark.

use std::time::Instant;

use crate::depth::Model;
use crate::error::{arg_err, Result};
use crate::nn::{Ctx, Init, ParamStore};
use crate::profile::{self, Recorder, Tally};
use crate::scalar::Scalar;
use crate::spectral::{global_filter, Purifier};
use crate::tensor::Tensor;

/// Published reference points the default configuration is calibrated to.
pub const TARGET_PARAMS: f64 = 2.7e6;
pub const TARGET_FLOPS: f64 = 7.1e9;
pub const PARAM_WINDOW: (f64, f64) = (2.4e6, 3.0e6);
pub const FLOP_TOLERANCE: f64 = 0.15;

pub fn count_params<T: Scalar>(store: &ParamStore<T>) -> usize {
    store.count()
}

/// Operation counts of one forward pass at a given input size.
///
/// Convolutions contribute multiply-accumulates (output elements × input
/// channels per group × kernel area), FFTs contribute 5·N·log₂N real
/// operations per plane. Elementwise work, normalization and pooling are
/// not counted. FLOPs are reported as 2·MAC + FFT operations; the 1·MAC
/// figure is given alongside.
#[derive(Clone, Debug)]
pub struct FlopReport {
    /// (height, width).
    pub input: (usize, usize),
    /// Depth network (encoder and decoder) scopes in execution order.
    pub depth: Vec<(String, Tally)>,
    /// Pose network scopes, counted for one frame pair.
    pub pose: Vec<(String, Tally)>,
    pub depth_params: usize,
    pub pose_params: usize,
}

fn total(entries: &[(String, Tally)]) -> Tally {
    entries.iter().fold(Tally::default(), |acc, (_, t)| Tally { macs: acc.macs + t.macs, fft_flops: acc.fft_flops + t.fft_flops })
}

impl FlopReport {
    pub fn depth_total(&self) -> Tally {
        total(&self.depth)
    }

    pub fn pose_total(&self) -> Tally {
        total(&self.pose)
    }

    /// Inference FLOPs of the depth network under the 2·MAC convention.
    pub fn flops(&self) -> u64 {
        self.depth_total().flops()
    }

    /// Inference FLOPs counting one FLOP per MAC.
    pub fn flops_single_mac(&self) -> u64 {
        let t = self.depth_total();
        t.macs + t.fft_flops
    }

    pub fn params(&self) -> usize {
        self.depth_params + self.pose_params
    }

    /// One row per scope: network, scope, MACs, FFT operations, FLOPs.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("network,scope,macs,fft_flops,flops\n");
        for (net, entries) in [("depth", &self.depth), ("pose", &self.pose)] {
            for (name, t) in entries {
                out.push_str(&format!("{net},{name},{},{},{}\n", t.macs, t.fft_flops, t.flops()));
            }
        }
        out
    }
}

/// Counts the operations of the depth network on one H×W image and of the
/// pose network on one frame pair. Counts depend only on shapes.
pub fn count_flops<T: Scalar>(model: &Model<T>, height: usize, width: usize) -> Result<FlopReport> {
    let ctx = Ctx::eval();
    let depth = {
        let rec = Recorder::start();
        model.disparities(&Tensor::zeros(&[1, 3, height, width]), &ctx)?;
        rec.entries()
    };
    let pose = {
        let rec = Recorder::start();
        let frame = Tensor::zeros(&[1, 3, height, width]);
        model.motion(&frame, &frame, &ctx)?;
        rec.entries()
    };
    Ok(FlopReport {
        input: (height, width),
        depth,
        pose,
        depth_params: model.depth_param_count(),
        pose_params: model.pose_param_count(),
    })
}

/// One timed point of a scaling curve.
#[derive(Clone, Debug, PartialEq)]
pub struct CurvePoint {
    /// Number of spatial positions (tokens).
    pub tokens: usize,
    pub seconds: f64,
    /// Exact operation count of one evaluation.
    pub ops: u64,
}

#[derive(Clone, Debug)]
pub struct BenchmarkCurve {
    pub name: &'static str,
    pub points: Vec<CurvePoint>,
}

impl BenchmarkCurve {
    /// Least-squares slope of log(seconds) against log(tokens).
    pub fn time_slope(&self) -> f64 {
        loglog_slope(self.points.iter().map(|p| (p.tokens as f64, p.seconds)))
    }

    /// Least-squares slope of log(ops) against log(tokens).
    pub fn op_slope(&self) -> f64 {
        loglog_slope(self.points.iter().map(|p| (p.tokens as f64, p.ops as f64)))
    }
}

pub fn loglog_slope(points: impl Iterator<Item = (f64, f64)>) -> f64 {
    let pts: Vec<(f64, f64)> = points.map(|(x, y)| (x.ln(), y.ln())).collect();
    let n = pts.len() as f64;
    let (mx, my) = (pts.iter().map(|p| p.0).sum::<f64>() / n, pts.iter().map(|p| p.1).sum::<f64>() / n);
    let sxy: f64 = pts.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = pts.iter().map(|(x, _)| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

/// Asymptotic operation model of the spectral global filter: N·(C + log₂N).
pub fn spectral_op_model(tokens: usize, channels: usize) -> f64 {
    tokens as f64 * (channels as f64 + (tokens as f64).log2())
}

/// Operation count of single-head attention over N tokens of width C:
/// N² score MACs plus N² value MACs, each C wide.
pub fn attention_macs(tokens: usize, channels: usize) -> u64 {
    2 * (tokens as u64) * (tokens as u64) * channels as u64
}

/// Single-head dot-product attention with queries, keys and values all
/// equal to the input tokens (`x` is C×N, channel-major). Softmax is
/// accumulated in one streaming pass per query so memory stays O(N·C).
pub fn attention_reference(x: &[f32], channels: usize, tokens: usize) -> Vec<f32> {
    let scale = 1.0 / (channels as f32).sqrt();
    // Token-major copy so each token's features are contiguous.
    let mut t = vec![0.0f32; tokens * channels];
    for c in 0..channels {
        for n in 0..tokens {
            t[n * channels + c] = x[c * tokens + n];
        }
    }
    let mut out = vec![0.0f32; tokens * channels];
    let mut acc = vec![0.0f32; channels];
    for q in 0..tokens {
        let query = &t[q * channels..][..channels];
        let (mut max, mut denom) = (f32::NEG_INFINITY, 0.0f32);
        acc.iter_mut().for_each(|a| *a = 0.0);
        for k in 0..tokens {
            let key = &t[k * channels..][..channels];
            let s = query.iter().zip(key).map(|(a, b)| a * b).sum::<f32>() * scale;
            if s > max {
                let r = (max - s).exp();
                denom *= r;
                acc.iter_mut().for_each(|a| *a *= r);
                max = s;
            }
            let p = (s - max).exp();
            denom += p;
            acc.iter_mut().zip(key).for_each(|(a, v)| *a += p * v);
        }
        out[q * channels..][..channels].iter_mut().zip(&acc).for_each(|(o, a)| *o = a / denom);
    }
    out
}

/// Spatial grid with `tokens` cells, as square as powers of two allow.
fn grid(tokens: usize) -> (usize, usize) {
    let bits = tokens.trailing_zeros();
    let h = 1usize << (bits / 2);
    (h, tokens / h)
}

/// Times the spectral global filter and the attention reference at each
/// token count (best of `repeats` runs) and records exact operation counts.
pub fn bench_complexity(sizes: &[usize], channels: usize, repeats: usize) -> Result<(BenchmarkCurve, BenchmarkCurve)> {
    if sizes.len() < 5 {
        return Err(arg_err!("need at least 5 sizes for a slope fit, got {}", sizes.len()));
    }
    if sizes.iter().any(|n| !n.is_power_of_two()) || sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(arg_err!("sizes must be strictly increasing powers of two"));
    }
    if channels == 0 || repeats == 0 {
        return Err(arg_err!("channels and repeats must be positive"));
    }
    let ctx = Ctx::eval();
    let (mut spectral, mut attention) = (Vec::new(), Vec::new());
    for &n in sizes {
        let (h, w) = grid(n);
        let mut store = ParamStore::<f32>::new();
        let purifier = Purifier::new(&mut Init::new(&mut store, 1), "purifier", channels, h, w, 0.5, true)?;
        let data: Vec<f32> = (0..channels * n).map(|i| ((i * 2654435761usize) % 1000) as f32 / 1000.0 - 0.5).collect();
        let x = Tensor::from_vec(&[1, channels, h, w], data.clone())?;
        let ops = {
            let rec = Recorder::start();
            {
                let _s = profile::scope("spectral");
                global_filter(&x, &purifier, &ctx)?;
            }
            rec.entries().iter().map(|(_, t)| t.flops()).sum()
        };
        let seconds = best_of(repeats, || {
            global_filter(&x, &purifier, &ctx).map(|_| ())
        })?;
        spectral.push(CurvePoint { tokens: n, seconds, ops });
        let seconds = best_of(repeats, || {
            std::hint::black_box(attention_reference(&data, channels, n));
            Ok(())
        })?;
        attention.push(CurvePoint { tokens: n, seconds, ops: 2 * attention_macs(n, channels) });
    }
    Ok((BenchmarkCurve { name: "dfsp_global", points: spectral }, BenchmarkCurve { name: "attention", points: attention }))
}

fn best_of(repeats: usize, mut f: impl FnMut() -> Result<()>) -> Result<f64> {
    let mut best = f64::INFINITY;
    for _ in 0..repeats {
        let start = Instant::now();
        f()?;
        best = best.min(start.elapsed().as_secs_f64());
    }
    Ok(best)
}

/// CSV with one row per (curve, point).
pub fn curves_to_csv(curves: &[&BenchmarkCurve]) -> String {
    let mut out = String::from("curve,tokens,seconds,ops\n");
    for c in curves {
        for p in &c.points {
            out.push_str(&format!("{},{},{:.9},{}\n", c.name, p.tokens, p.seconds, p.ops));
        }
    }
    out
}

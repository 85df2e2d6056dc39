use crate::error::{contract_err, dim_err, Result};

/// The seven standard depth error and accuracy measures.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DepthMetrics {
    pub abs_rel: f64,
    pub sq_rel: f64,
    pub rmse: f64,
    pub rmse_log: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub delta3: f64,
}

impl DepthMetrics {
    pub fn as_array(&self) -> [f64; 7] {
        [self.abs_rel, self.sq_rel, self.rmse, self.rmse_log, self.delta1, self.delta2, self.delta3]
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalSettings {
    /// Predictions are clamped to (MIN_EVAL_DEPTH, cap) and pixels with
    /// ground truth outside that range are skipped.
    pub cap: f64,
    pub median_scaling: bool,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings { cap: 80.0, median_scaling: true }
    }
}

pub const MIN_EVAL_DEPTH: f64 = 1e-3;

/// Median with the even-count convention of averaging the middle pair.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

pub fn eigen_metrics(pred: &[f64], gt: &[f64], settings: &EvalSettings) -> Result<DepthMetrics> {
    if pred.len() != gt.len() {
        return Err(dim_err!("prediction has {} pixels, ground truth {}", pred.len(), gt.len()));
    }
    let valid: Vec<usize> = (0..gt.len()).filter(|&i| gt[i] > MIN_EVAL_DEPTH && gt[i] <= settings.cap).collect();
    if valid.is_empty() {
        return Err(contract_err!("no pixel has ground truth inside ({MIN_EVAL_DEPTH}, {}]", settings.cap));
    }
    let g: Vec<f64> = valid.iter().map(|&i| gt[i]).collect();
    let mut p: Vec<f64> = valid.iter().map(|&i| pred[i]).collect();
    if settings.median_scaling {
        let scale = median(&g) / median(&p);
        p.iter_mut().for_each(|v| *v *= scale);
    }
    p.iter_mut().for_each(|v| *v = v.clamp(MIN_EVAL_DEPTH, settings.cap));
    let n = g.len() as f64;
    let mean = |f: &dyn Fn(f64, f64) -> f64| p.iter().zip(&g).map(|(&a, &b)| f(a, b)).sum::<f64>() / n;
    let within = |t: f64| mean(&|a, b| if (a / b).max(b / a) < t { 1.0 } else { 0.0 });
    Ok(DepthMetrics {
        abs_rel: mean(&|a, b| (a - b).abs() / b),
        sq_rel: mean(&|a, b| (a - b) * (a - b) / b),
        rmse: mean(&|a, b| (a - b) * (a - b)).sqrt(),
        rmse_log: mean(&|a, b| (a.ln() - b.ln()).powi(2)).sqrt(),
        delta1: within(1.25),
        delta2: within(1.25f64.powi(2)),
        delta3: within(1.25f64.powi(3)),
    })
}

/// Ranks starting at 1, ties receiving the average of their positions.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation (Pearson correlation of average ranks).
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(dim_err!("rank correlation needs two equal-length samples of at least 2, got {} and {}", a.len(), b.len()));
    }
    let (ra, rb) = (average_ranks(a), average_ranks(b));
    let n = ra.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma) * (x - ma)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb) * (y - mb)).sum();
    if va == 0.0 || vb == 0.0 {
        return Err(contract_err!("rank correlation undefined for a constant sample"));
    }
    Ok(cov / (va * vb).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const RAW: EvalSettings = EvalSettings { cap: 80.0, median_scaling: false };

    #[test]
    fn perfect_prediction() {
        let gt: Vec<f64> = (1..50).map(|i| i as f64 * 1.3).collect();
        let m = eigen_metrics(&gt, &gt, &EvalSettings::default()).unwrap();
        assert_eq!(m.as_array(), [0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn uniform_overestimate_thresholds() {
        let gt = vec![2.0, 5.0, 11.0, 40.0];
        let pred: Vec<f64> = gt.iter().map(|g| 1.3 * g).collect();
        let m = eigen_metrics(&pred, &gt, &RAW).unwrap();
        assert_eq!((m.delta1, m.delta2, m.delta3), (0.0, 1.0, 1.0));
        assert!((m.abs_rel - 0.3).abs() < 1e-12);
    }

    #[test]
    fn two_pixel_hand_calculation() {
        let m = eigen_metrics(&[1.0, 16.0], &[2.0, 8.0], &RAW).unwrap();
        assert!((m.abs_rel - 0.75).abs() < 1e-15);
        assert!((m.sq_rel - 4.25).abs() < 1e-15);
        assert!((m.rmse - 32.5f64.sqrt()).abs() < 1e-15);
        assert!((m.rmse_log - 2f64.ln()).abs() < 1e-15);
        assert_eq!((m.delta1, m.delta2, m.delta3), (0.0, 0.0, 0.0));
        // Median scaling multiplies by 5 / 8.5: predictions 10/17 and 160/17.
        let s = eigen_metrics(&[1.0, 16.0], &[2.0, 8.0], &EvalSettings::default()).unwrap();
        let (p1, p2) = (10.0 / 17.0, 160.0 / 17.0);
        assert!((s.abs_rel - ((2.0 - p1) / 2.0 + (p2 - 8.0) / 8.0) / 2.0).abs() < 1e-12);
        assert_eq!(s.delta1, 0.5);
    }

    #[test]
    fn invalid_pixels_are_skipped_and_all_invalid_errors() {
        let m = eigen_metrics(&[3.0, 99.0], &[3.0, 0.0], &RAW).unwrap();
        assert_eq!(m.abs_rel, 0.0);
        assert!(matches!(eigen_metrics(&[1.0], &[0.0], &RAW), Err(crate::Error::Contract(_))));
        assert!(eigen_metrics(&[1.0, 2.0], &[1.0], &RAW).is_err());
    }

    #[test]
    fn spearman_examples() {
        assert!((spearman(&[1.0, 2.0, 3.0, 4.0], &[10.0, 20.0, 25.0, 100.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-15);
        assert_eq!(average_ranks(&[5.0, 1.0, 5.0, 3.0]), vec![3.5, 1.0, 3.5, 2.0]);
        assert!(spearman(&[1.0, 1.0], &[1.0, 2.0]).is_err());
    }

    proptest! {
        #[test]
        fn deltas_nested_and_median_scaling_invariant(
            gt in prop::collection::vec(0.5f64..60.0, 4..40),
            noise in prop::collection::vec(0.5f64..2.0, 40),
            c in 0.1f64..10.0,
        ) {
            let pred: Vec<f64> = gt.iter().zip(&noise).map(|(g, n)| g * n).collect();
            let m = eigen_metrics(&pred, &gt, &EvalSettings::default()).unwrap();
            prop_assert!(m.delta1 <= m.delta2 && m.delta2 <= m.delta3);
            let scaled: Vec<f64> = pred.iter().map(|p| c * p).collect();
            let s = eigen_metrics(&scaled, &gt, &EvalSettings::default()).unwrap();
            for (a, b) in m.as_array().iter().zip(s.as_array()) {
                prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()));
            }
        }
    }
}

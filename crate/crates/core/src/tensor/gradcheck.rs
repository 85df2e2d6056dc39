use super::Tensor;
use crate::error::{arg_err, contract_err, Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    /// Central-difference step, in (0, 1e-3].
    pub step: f64,
    /// Pass threshold on the relative error.
    pub tol: f64,
    /// Denominator floor: errors are divided by max(|analytic|, |numeric|, floor),
    /// so gradients below the floor are compared absolutely.
    pub floor: f64,
    /// Coordinates whose one-sided slopes differ by more than
    /// `kink * max(1, |slope|)` sit on a non-differentiable point (ties in
    /// max/min, clamp edges) and are excluded rather than failed.
    pub kink: f64,
    /// Check at most this many evenly spaced coordinates per input.
    pub max_coords: Option<usize>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions { step: 1e-6, tol: 1e-5, floor: 1e-3, kink: 1e-3, max_coords: None }
    }
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// (input, coordinate) of the worst agreement.
    pub worst: Option<(usize, usize)>,
    pub checked: usize,
    /// (input, coordinate) pairs skipped as non-differentiable points.
    pub excluded: Vec<(usize, usize)>,
    pub passed: bool,
}

/// Compares the analytic gradient of the scalar `f(inputs)` with central
/// finite differences, coordinate by coordinate. `inputs` must be leaves
/// that require gradients; their values are perturbed in place and restored.
pub fn grad_check<T, F>(f: F, inputs: &[Tensor<T>], opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    T: Scalar,
    F: Fn(&[Tensor<T>]) -> Result<Tensor<T>>,
{
    if !(opts.step > 0.0 && opts.step <= 1e-3) {
        return Err(arg_err!("grad_check: step {} outside (0, 1e-3]", opts.step));
    }
    for (k, x) in inputs.iter().enumerate() {
        if !x.is_leaf() || !x.requires_grad() {
            return Err(contract_err!("grad_check: input {k} must be a leaf requiring gradients"));
        }
        x.zero_grad();
    }
    let loss = f(inputs)?;
    let base = finite(&loss, 0)?;
    loss.backward()?;
    let analytic: Vec<Vec<T>> = inputs.iter().map(|x| x.grad().expect("zeroed above")).collect();

    let h = T::c(opts.step);
    let eval = |k: usize, i: usize, delta: T| -> Result<f64> {
        let orig = inputs[k].data()[i];
        inputs[k].data_mut()[i] = orig + delta;
        let out = f(inputs);
        inputs[k].data_mut()[i] = orig;
        finite(&out?, i)
    };

    let mut report = GradCheckReport { passed: true, ..Default::default() };
    for (k, x) in inputs.iter().enumerate() {
        let n = x.numel();
        let stride = opts.max_coords.map_or(1, |m| n.div_ceil(m.max(1)).max(1));
        for i in (0..n).step_by(stride) {
            let plus = eval(k, i, h)?;
            let minus = eval(k, i, -h)?;
            let step = opts.step;
            let (right, left) = ((plus - base) / step, (base - minus) / step);
            let numeric = (plus - minus) / (2.0 * step);
            if (right - left).abs() > opts.kink * right.abs().max(left.abs()).max(1.0) {
                report.excluded.push((k, i));
                continue;
            }
            let a = analytic[k][i].f64();
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(opts.floor);
            report.checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = err;
                report.worst = Some((k, i));
            }
        }
    }
    report.passed = report.max_rel_error <= opts.tol;
    Ok(report)
}

fn finite<T: Scalar>(t: &Tensor<T>, index: usize) -> Result<f64> {
    if t.numel() != 1 {
        return Err(contract_err!("grad_check: function must return a scalar, got shape {:?}", t.shape()));
    }
    let v = t.item().f64();
    if !v.is_finite() {
        return Err(Error::Numeric { index, message: format!("function value {v} is not finite") });
    }
    Ok(v)
}

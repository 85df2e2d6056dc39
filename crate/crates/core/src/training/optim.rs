use crate::error::{arg_err, contract_err, Result};
use crate::nn::ParamStore;
use crate::scalar::Scalar;

/// Learning rate the cosine schedule starts from by default.
pub const DEFAULT_BASE_LR: f64 = 8e-6;

/// base·(1 + cos(π·step/total))/2.
pub fn cosine_lr(step: usize, total: usize, base: f64) -> Result<f64> {
    if total == 0 || step > total {
        return Err(arg_err!("cosine schedule step {step} outside 0..={total}"));
    }
    Ok(base * (1.0 + (std::f64::consts::PI * step as f64 / total as f64).cos()) / 2.0)
}

/// AdamW with decoupled weight decay. Parameters registered without decay
/// (normalization affine terms, scalar gates, the spectral mask) are only
/// moved by the adaptive step; bounded parameters are projected back into
/// their interval after each update.
pub struct AdamW<T: Scalar> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(store: &ParamStore<T>, weight_decay: f64) -> Self {
        let zeros = || store.params().iter().map(|p| vec![T::zero(); p.tensor.numel()]).collect();
        AdamW { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay, step: 0, first: zeros(), second: zeros() }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update using the gradients currently stored on the parameters.
    pub fn step(&mut self, store: &ParamStore<T>, lr: f64) -> Result<()> {
        let params = store.params();
        if params.len() != self.first.len() {
            return Err(contract_err!("optimizer built for {} parameters, store has {}", self.first.len(), params.len()));
        }
        let grads = params
            .iter()
            .map(|p| p.tensor.grad().ok_or_else(|| contract_err!("parameter {} has no gradient", p.name)))
            .collect::<Result<Vec<_>>>()?;
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (T::c(self.beta1), T::c(self.beta2));
        let (one_b1, one_b2) = (T::c(1.0 - self.beta1), T::c(1.0 - self.beta2));
        let correct1 = T::c(1.0 - self.beta1.powi(t));
        let correct2 = T::c(1.0 - self.beta2.powi(t));
        let (lr_t, eps) = (T::c(lr), T::c(self.eps));
        for (i, (p, g)) in params.iter().zip(&grads).enumerate() {
            let shrink = if p.decay { T::c(1.0 - lr * self.weight_decay) } else { T::one() };
            let (m, v) = (&mut self.first[i], &mut self.second[i]);
            let mut data = p.tensor.data_mut();
            for j in 0..data.len() {
                m[j] = b1 * m[j] + one_b1 * g[j];
                v[j] = b2 * v[j] + one_b2 * g[j] * g[j];
                let update = (m[j] / correct1) / ((v[j] / correct2).sqrt() + eps);
                data[j] = data[j] * shrink - lr_t * update;
            }
            if let Some((lo, hi)) = p.bounds {
                let (lo, hi) = (T::c(lo), T::c(hi));
                data.iter_mut().for_each(|x| *x = x.max(lo).min(hi));
            }
        }
        Ok(())
    }
}

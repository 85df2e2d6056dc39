//! Named parameters and the handful of layers the networks are built from.

use std::cell::RefCell;
use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{contract_err, Result};
use crate::scalar::Scalar;
use crate::tensor::{batch_norm, conv2d, layer_norm, BatchNormStats, Conv2dSpec, Tensor};

/// A trainable tensor with its unique dotted path.
#[derive(Clone, Debug)]
pub struct Parameter<T: Scalar> {
    pub name: String,
    pub tensor: Tensor<T>,
    /// Whether decoupled weight decay applies.
    pub decay: bool,
    /// Projection interval applied after each optimizer step.
    pub bounds: Option<(f64, f64)>,
}

/// All parameters and non-trainable buffers of a model, in creation order.
#[derive(Default)]
pub struct ParamStore<T: Scalar> {
    params: Vec<Parameter<T>>,
    buffers: Vec<(String, Tensor<T>)>,
    names: HashMap<String, usize>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { params: Vec::new(), buffers: Vec::new(), names: HashMap::new() }
    }

    fn insert_name(&mut self, name: &str) {
        let fresh = self.names.insert(name.to_string(), self.params.len() + self.buffers.len()).is_none();
        assert!(fresh, "duplicate parameter name {name}");
    }

    pub fn params(&self) -> &[Parameter<T>] {
        &self.params
    }

    pub fn buffers(&self) -> &[(String, Tensor<T>)] {
        &self.buffers
    }

    pub fn get(&self, name: &str) -> Option<&Parameter<T>> {
        self.params.iter().find(|p| p.name == name)
    }

    /// Total number of trainable scalars.
    pub fn count(&self) -> usize {
        self.params.iter().map(|p| p.tensor.numel()).sum()
    }

    /// Trainable scalars whose name starts with `prefix`.
    pub fn count_prefix(&self, prefix: &str) -> usize {
        self.params
            .iter()
            .filter(|p| p.name.starts_with(prefix))
            .map(|p| p.tensor.numel())
            .sum()
    }

    pub fn zero_grad(&self) {
        for p in &self.params {
            p.tensor.zero_grad();
        }
    }

    /// Every named tensor (parameters then buffers), for checkpoints.
    pub fn named_tensors(&self) -> Vec<(String, Tensor<T>)> {
        self.params
            .iter()
            .map(|p| (p.name.clone(), p.tensor.clone()))
            .chain(self.buffers.iter().cloned())
            .collect()
    }

    /// Copies of all parameter and buffer values, in [`Self::named_tensors`] order.
    pub fn snapshot(&self) -> Vec<Vec<T>> {
        self.named_tensors().iter().map(|(_, t)| t.to_vec()).collect()
    }

    pub fn restore(&self, values: &[Vec<T>]) -> Result<()> {
        let tensors = self.named_tensors();
        if values.len() != tensors.len() {
            return Err(contract_err!("snapshot has {} tensors, model has {}", values.len(), tensors.len()));
        }
        for ((name, t), v) in tensors.iter().zip(values) {
            if v.len() != t.numel() {
                return Err(contract_err!("snapshot entry for {name} has {} values, expected {}", v.len(), t.numel()));
            }
            t.data_mut().copy_from_slice(v);
        }
        Ok(())
    }
}

/// 64-bit FNV-1a; keeps per-parameter seeds stable across runs and builds.
pub fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

/// Registers parameters under a dotted prefix. Each parameter draws from its
/// own generator seeded by (model seed, full name), so adding or removing a
/// module never changes the initial values of the others.
pub struct Init<'a, T: Scalar> {
    store: &'a mut ParamStore<T>,
    prefix: String,
    seed: u64,
}

impl<'a, T: Scalar> Init<'a, T> {
    pub fn new(store: &'a mut ParamStore<T>, seed: u64) -> Self {
        Init { store, prefix: String::new(), seed }
    }

    pub fn sub(&mut self, name: &str) -> Init<'_, T> {
        let prefix = self.path(name);
        Init { store: self.store, prefix, seed: self.seed }
    }

    fn path(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        }
    }

    pub fn rng_for(&self, name: &str) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed ^ fnv1a(&self.path(name)))
    }

    pub fn param_with(&mut self, name: &str, shape: &[usize], data: Vec<T>, decay: bool, bounds: Option<(f64, f64)>) -> Tensor<T> {
        let full = self.path(name);
        let tensor = Tensor::leaf(shape, data).expect("parameter shape matches data");
        self.store.insert_name(&full);
        self.store.params.push(Parameter { name: full, tensor: tensor.clone(), decay, bounds });
        tensor
    }

    /// He-uniform: U(−b, b) with b = sqrt(6 / fan_in).
    pub fn kaiming(&mut self, name: &str, shape: &[usize], fan_in: usize) -> Tensor<T> {
        let bound = (6.0 / fan_in as f64).sqrt();
        let mut rng = self.rng_for(name);
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| T::c(rng.gen_range(-bound..bound))).collect();
        self.param_with(name, shape, data, true, None)
    }

    /// Constant-filled parameter excluded from weight decay.
    pub fn constant(&mut self, name: &str, shape: &[usize], value: f64) -> Tensor<T> {
        let n: usize = shape.iter().product();
        self.param_with(name, shape, vec![T::c(value); n], false, None)
    }

    pub fn zeros(&mut self, name: &str, shape: &[usize]) -> Tensor<T> {
        let n: usize = shape.iter().product();
        self.param_with(name, shape, vec![T::zero(); n], true, None)
    }

    pub fn buffer(&mut self, name: &str, tensor: Tensor<T>) {
        let full = self.path(name);
        self.store.insert_name(&full);
        self.store.buffers.push((full, tensor));
    }
}

/// Per-forward settings: training mode and the dropout generator.
pub struct Ctx {
    pub training: bool,
    pub dropout: bool,
    rng: RefCell<ChaCha8Rng>,
}

impl Ctx {
    pub fn eval() -> Self {
        Ctx { training: false, dropout: false, rng: RefCell::new(ChaCha8Rng::seed_from_u64(0)) }
    }

    /// Training mode: batch statistics and dropout drawn from `seed`.
    pub fn train(seed: u64) -> Self {
        Ctx { training: true, dropout: true, rng: RefCell::new(ChaCha8Rng::seed_from_u64(seed)) }
    }

    /// Training-mode normalization without dropout; deterministic in the inputs.
    pub fn train_deterministic() -> Self {
        Ctx { training: true, dropout: false, rng: RefCell::new(ChaCha8Rng::seed_from_u64(0)) }
    }
}

/// Inverted dropout: zero with probability `rate`, rescale survivors.
pub fn dropout<T: Scalar>(x: &Tensor<T>, rate: f64, ctx: &Ctx) -> Result<Tensor<T>> {
    if !ctx.training || !ctx.dropout || rate <= 0.0 {
        return Ok(x.clone());
    }
    let keep = T::c(1.0 / (1.0 - rate));
    let mut rng = ctx.rng.borrow_mut();
    let mask: Vec<T> = (0..x.numel())
        .map(|_| if rng.gen::<f64>() < rate { T::zero() } else { keep })
        .collect();
    x.mul(&Tensor::from_vec(x.shape(), mask)?)
}

pub struct Conv2d<T: Scalar> {
    pub weight: Tensor<T>,
    pub bias: Option<Tensor<T>>,
    pub spec: Conv2dSpec,
}

impl<T: Scalar> Conv2d<T> {
    pub fn new(init: &mut Init<'_, T>, name: &str, cin: usize, cout: usize, k: usize, spec: Conv2dSpec, bias: bool) -> Self {
        let mut sub = init.sub(name);
        let cin_g = cin / spec.groups;
        let weight = sub.kaiming("weight", &[cout, cin_g, k, k], cin_g * k * k);
        let bias = bias.then(|| sub.zeros("bias", &[cout]));
        Conv2d { weight, bias, spec }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        conv2d(x, &self.weight, self.bias.as_ref(), self.spec)
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }
}

pub struct BatchNorm2d<T: Scalar> {
    pub gain: Tensor<T>,
    pub bias: Tensor<T>,
    pub stats: BatchNormStats<T>,
    pub eps: T,
}

impl<T: Scalar> BatchNorm2d<T> {
    pub fn new(init: &mut Init<'_, T>, name: &str, channels: usize) -> Self {
        let mut sub = init.sub(name);
        let gain = sub.constant("gain", &[channels], 1.0);
        let bias = sub.constant("bias", &[channels], 0.0);
        let stats = BatchNormStats::new(channels);
        sub.buffer("running_mean", stats.mean.clone());
        sub.buffer("running_var", stats.var.clone());
        BatchNorm2d { gain, bias, stats, eps: T::c(1e-5) }
    }

    pub fn forward(&self, x: &Tensor<T>, ctx: &Ctx) -> Result<Tensor<T>> {
        batch_norm(x, &self.gain, &self.bias, self.eps, Some(&self.stats), ctx.training)
    }
}

/// Channel-axis layer norm for image features.
pub struct LayerNorm2d<T: Scalar> {
    pub gain: Tensor<T>,
    pub bias: Tensor<T>,
    pub eps: T,
}

impl<T: Scalar> LayerNorm2d<T> {
    pub fn new(init: &mut Init<'_, T>, name: &str, channels: usize) -> Self {
        let mut sub = init.sub(name);
        LayerNorm2d {
            gain: sub.constant("gain", &[channels], 1.0),
            bias: sub.constant("bias", &[channels], 0.0),
            eps: T::c(1e-5),
        }
    }

    /// Fixed unit gain and zero bias, registering no parameters; for use
    /// directly before a batch norm, which would cancel a learned affine map.
    pub fn plain(channels: usize) -> Self {
        LayerNorm2d { gain: Tensor::full(&[channels], T::one()), bias: Tensor::zeros(&[channels]), eps: T::c(1e-5) }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        layer_norm(x, &self.gain, &self.bias, self.eps)
    }
}

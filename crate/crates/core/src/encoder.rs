//! Three-stage depth encoder: a convolutional stem, shuffle-dilation blocks,
//! rotation attention, and the dual-domain block in the last stage.

use crate::config::{Ablation, ModelConfig};
use crate::error::{arg_err, dim_err, Result};
use crate::nn::{dropout, BatchNorm2d, Conv2d, Ctx, Init, LayerNorm2d};
use crate::profile;
use crate::scalar::Scalar;
use crate::spectral::{Dfsp, DfspOptions};
use crate::tensor::{channel_shuffle, channel_split, concat, pool2d, Conv2dSpec, PoolMode, PoolWindow, Tensor};

/// One residual step: depthwise dilated 3×3, layer norm, batch norm,
/// leaky ReLU, point-wise projection.
struct DilatedUnit<T: Scalar> {
    depthwise: Conv2d<T>,
    layer_norm: LayerNorm2d<T>,
    batch_norm: BatchNorm2d<T>,
    linear: Conv2d<T>,
}

/// Shuffle-dilation block. The input is shuffled and split; one half
/// bypasses, the other runs through the dilated units with a residual
/// connection; the halves are rejoined and shuffled again.
pub struct Sdc<T: Scalar> {
    units: Vec<DilatedUnit<T>>,
    slope: T,
    dropout: f64,
    shuffle: bool,
}

impl<T: Scalar> Sdc<T> {
    pub fn new(init: &mut Init<'_, T>, name: &str, channels: usize, dilations: &[usize], slope: f64, dropout: f64, shuffle: bool) -> Result<Self> {
        if !channels.is_multiple_of(2) {
            return Err(dim_err!("shuffle-dilation block needs an even channel count, got {channels}"));
        }
        let half = channels / 2;
        let mut sub = init.sub(name);
        let units = dilations
            .iter()
            .enumerate()
            .map(|(i, &r)| {
                let mut u = sub.sub(&format!("unit{i}"));
                DilatedUnit {
                    depthwise: Conv2d::new(&mut u, "dconv", half, half, 3, Conv2dSpec::same(3, r).with_groups(half), false),
                    layer_norm: LayerNorm2d::plain(half),
                    batch_norm: BatchNorm2d::new(&mut u, "bn", half),
                    linear: Conv2d::new(&mut u, "linear", half, half, 1, Conv2dSpec::default(), true),
                }
            })
            .collect();
        Ok(Sdc { units, slope: T::c(slope), dropout, shuffle })
    }

    /// Point-wise projection weights of each unit, in order.
    pub fn linear_weights(&self) -> Vec<Tensor<T>> {
        self.units.iter().map(|u| u.linear.weight.clone()).collect()
    }

    pub fn forward(&self, x: &Tensor<T>, ctx: &Ctx) -> Result<Tensor<T>> {
        let shuffled = if self.shuffle { channel_shuffle(x, 2)? } else { x.clone() };
        let (bypass, processed) = channel_split(&shuffled)?;
        let mut y = processed.clone();
        for u in &self.units {
            let z = u.batch_norm.forward(&u.layer_norm.forward(&u.depthwise.forward(&y)?)?, ctx)?;
            y = u.linear.forward(&z.leaky_relu(self.slope))?;
        }
        let residual = dropout(&y, self.dropout, ctx)?.add(&processed)?;
        let joined = concat(&[&bypass, &residual], 1)?;
        if self.shuffle {
            channel_shuffle(&joined, 2)
        } else {
            Ok(joined)
        }
    }
}

/// Kernel size for the attention convolutions: the odd integer nearest to
/// (log2(C) + 1) / 2, at least 3. Halfway cases round up.
pub fn adaptive_kernel_size(channels: usize) -> usize {
    let t = ((channels.max(1) as f64).log2() + 1.0) / 2.0;
    // nearest odd: odd numbers are 2m+1, so round (t − 1)/2 to m
    let m = ((t - 1.0) / 2.0 + 0.5).floor().max(0.0) as usize;
    (2 * m + 1).max(3)
}

/// Axis permutation of one attention branch. Branch 0 keeps the layout,
/// branch 1 swaps channels with height, branch 2 swaps channels with width.
/// Each permutation is its own inverse.
pub fn raka_rotate<T: Scalar>(x: &Tensor<T>, branch: usize) -> Result<Tensor<T>> {
    x.dims4("raka_rotate")?;
    match branch {
        0 => Ok(x.clone()),
        1 => x.permute(&[0, 2, 1, 3]),
        2 => x.permute(&[0, 3, 2, 1]),
        _ => Err(arg_err!("rotation branch {branch} not in 0..=2")),
    }
}

/// Rotation attention: in each of three rotated views the leading feature
/// axis is summarized by its max and mean, a small convolution plus sigmoid
/// turns that into a gate, and the gated views are rotated back and mixed
/// with learnable weights.
pub struct Raka<T: Scalar> {
    pub convs: Vec<Conv2d<T>>,
    pub weights: Vec<Tensor<T>>,
}

impl<T: Scalar> Raka<T> {
    pub fn new(init: &mut Init<'_, T>, name: &str, channels: usize, lambda_init: f64) -> Self {
        let k = adaptive_kernel_size(channels);
        let mut sub = init.sub(name);
        let convs = (0..3)
            .map(|i| Conv2d::new(&mut sub, &format!("gate{i}"), 2, 1, k, Conv2dSpec::same(k, 1), true))
            .collect();
        let weights = (0..3).map(|i| sub.constant(&format!("lambda{i}"), &[1, 1, 1, 1], lambda_init)).collect();
        Raka { convs, weights }
    }

    pub fn kernel_size(&self) -> usize {
        self.convs[0].weight.shape()[2]
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut out: Option<Tensor<T>> = None;
        for (i, (conv, lambda)) in self.convs.iter().zip(&self.weights).enumerate() {
            let xi = raka_rotate(x, i)?;
            let pooled = concat(&[&xi.max_axis(1)?, &xi.mean_axes(&[1])?], 1)?;
            let gate = conv.forward(&pooled)?.sigmoid();
            let branch = raka_rotate(&xi.mul(&gate)?, i)?.mul(lambda)?;
            out = Some(match out {
                None => branch,
                Some(acc) => acc.add(&branch)?,
            });
        }
        Ok(out.expect("three branches"))
    }
}

struct ConvBnAct<T: Scalar> {
    conv: Conv2d<T>,
    bn: BatchNorm2d<T>,
}

impl<T: Scalar> ConvBnAct<T> {
    fn new(init: &mut Init<'_, T>, name: &str, cin: usize, cout: usize) -> Self {
        let mut sub = init.sub(name);
        ConvBnAct {
            conv: Conv2d::new(&mut sub, "conv", cin, cout, 3, Conv2dSpec::same(3, 1), false),
            bn: BatchNorm2d::new(&mut sub, "bn", cout),
        }
    }

    fn forward(&self, x: &Tensor<T>, slope: T, ctx: &Ctx) -> Result<Tensor<T>> {
        Ok(self.bn.forward(&self.conv.forward(x)?, ctx)?.leaky_relu(slope))
    }
}

pub struct Stage<T: Scalar> {
    /// Present from the second stage on: merges pooled features and image.
    entry: Option<ConvBnAct<T>>,
    pub sdc: Vec<Sdc<T>>,
    pub raka: Option<Raka<T>>,
    pub dfsp: Option<Dfsp<T>>,
}

/// Features at 1/4, 1/8 and 1/16 of the input resolution.
pub struct StageOutput<T: Scalar> {
    pub features: [Tensor<T>; 3],
}

pub struct Encoder<T: Scalar> {
    stem: [ConvBnAct<T>; 2],
    pub stages: Vec<Stage<T>>,
    slope: T,
}

fn halve<T: Scalar>(x: &Tensor<T>, mode: PoolMode) -> Result<Tensor<T>> {
    pool2d(x, mode, PoolWindow::Window { size: 2, stride: 2 })
}

impl<T: Scalar> Encoder<T> {
    pub fn new(init: &mut Init<'_, T>, name: &str, cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let mut sub = init.sub(name);
        let [c1, ..] = cfg.stage_channels;
        let stem = [
            ConvBnAct::new(&mut sub, "stem0", 3, cfg.stem_channels),
            ConvBnAct::new(&mut sub, "stem1", cfg.stem_channels, c1),
        ];
        let dilations = cfg.effective_dilations();
        let (h, w) = cfg.input_size;
        let mut stages = Vec::with_capacity(3);
        for s in 0..3 {
            let c = cfg.stage_channels[s];
            let mut st = sub.sub(&format!("stage{}", s + 1));
            let entry = (s > 0).then(|| ConvBnAct::new(&mut st, "entry", cfg.stage_channels[s - 1] + 3, c));
            let sdc = (0..cfg.sdc_per_stage[s])
                .map(|i| Sdc::new(&mut st, &format!("sdc{i}"), c, &dilations, cfg.leaky_slope, cfg.sdc_dropout, cfg.shuffles()))
                .collect::<Result<Vec<_>>>()?;
            let raka = (cfg.ablation != Some(Ablation::NoRaka)).then(|| Raka::new(&mut st, "raka", c, cfg.raka_lambda_init));
            let dfsp = if s == 2 && cfg.ablation != Some(Ablation::NoDfsp) {
                let opts = DfspOptions {
                    gamma: cfg.gamma,
                    dropout: cfg.dfsp_dropout,
                    shuffle: cfg.shuffles(),
                    learnable_mask: cfg.learnable_mask,
                };
                Some(Dfsp::new(&mut st, "dfsp", c, h / 16, w / 16, &opts)?)
            } else {
                None
            };
            stages.push(Stage { entry, sdc, raka, dfsp });
        }
        Ok(Encoder { stem, stages, slope: T::c(cfg.leaky_slope) })
    }

    pub fn forward(&self, image: &Tensor<T>, ctx: &Ctx) -> Result<StageOutput<T>> {
        let [_, c, h, w] = image.dims4("encoder input")?;
        if c != 3 {
            return Err(dim_err!("encoder expects 3 input channels, got {c}"));
        }
        if h % 16 != 0 || w % 16 != 0 {
            return Err(dim_err!("encoder input {h}x{w} must be divisible by 16 on both axes"));
        }
        let mut x = {
            let _s = profile::scope("stem");
            let x = halve(&self.stem[0].forward(image, self.slope, ctx)?, PoolMode::Max)?;
            halve(&self.stem[1].forward(&x, self.slope, ctx)?, PoolMode::Max)?
        };
        let mut img = halve(&halve(image, PoolMode::Avg)?, PoolMode::Avg)?;
        let mut feats = Vec::with_capacity(3);
        for (s, stage) in self.stages.iter().enumerate() {
            let _s = profile::scope(&format!("stage{}", s + 1));
            if let Some(entry) = &stage.entry {
                x = halve(&x, PoolMode::Avg)?;
                img = halve(&img, PoolMode::Avg)?;
                x = entry.forward(&concat(&[&x, &img], 1)?, self.slope, ctx)?;
            }
            for (i, block) in stage.sdc.iter().enumerate() {
                let _b = profile::scope(&format!("sdc{i}"));
                x = block.forward(&x, ctx)?;
            }
            if let Some(raka) = &stage.raka {
                let _b = profile::scope("raka");
                x = raka.forward(&x)?;
            }
            if let Some(dfsp) = &stage.dfsp {
                let _b = profile::scope("dfsp");
                x = dfsp.forward(&x, ctx)?;
            }
            feats.push(x.clone());
        }
        let [f1, f2, f3]: [Tensor<T>; 3] = feats.try_into().expect("three stages");
        Ok(StageOutput { features: [f1, f2, f3] })
    }
}

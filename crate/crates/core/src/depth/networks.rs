use crate::config::ModelConfig;
use crate::encoder::StageOutput;
use crate::error::{dim_err, Result};
use crate::nn::{BatchNorm2d, Conv2d, Ctx, Init};
use crate::profile;
use crate::scalar::Scalar;
use crate::tensor::{bilinear_upsample, concat, pool2d, Conv2dSpec, PoolMode, PoolWindow, Tensor};

struct DecoderLevel<T: Scalar> {
    before: Conv2d<T>,
    after: Conv2d<T>,
}

/// Upsampling decoder producing sigmoid disparities at full, 1/2 and 1/4
/// resolution (finest first, truncated to the configured number of scales).
///
/// Each level applies a 3×3 conv, doubles the resolution, optionally
/// concatenates the encoder features of that resolution and applies a second
/// 3×3 conv. Level widths come from `decoder_channels`.
pub struct Decoder<T: Scalar> {
    /// Coarsest level first.
    levels: Vec<DecoderLevel<T>>,
    /// Disparity heads for full, 1/2, 1/4 resolution.
    heads: Vec<Conv2d<T>>,
    slope: T,
}

impl<T: Scalar> Decoder<T> {
    pub fn new(init: &mut Init<'_, T>, name: &str, cfg: &ModelConfig) -> Self {
        let mut sub = init.sub(name);
        let [c1, c2, c3] = cfg.stage_channels;
        let [d0, d1, d2, d3] = cfg.decoder_channels;
        // (input width, level width, skip width) from the 1/16 level down.
        let plan = [(c3, d3, c2), (d3, d2, c1), (d2, d1, 0), (d1, d0, 0)];
        let levels = plan
            .iter()
            .enumerate()
            .map(|(i, &(cin, width, skip))| {
                let mut lv = sub.sub(&format!("level{}", 3 - i));
                DecoderLevel {
                    before: Conv2d::new(&mut lv, "conv0", cin, width, 3, Conv2dSpec::same(3, 1), true),
                    after: Conv2d::new(&mut lv, "conv1", width + skip, width, 3, Conv2dSpec::same(3, 1), true),
                }
            })
            .collect();
        let head_widths = [d0, d1, d2];
        let heads = (0..cfg.scales)
            .map(|s| Conv2d::new(&mut sub, &format!("disp{s}"), head_widths[s], 1, 3, Conv2dSpec::same(3, 1), true))
            .collect();
        Decoder { levels, heads, slope: T::c(cfg.leaky_slope) }
    }

    pub fn scales(&self) -> usize {
        self.heads.len()
    }

    pub fn forward(&self, feats: &StageOutput<T>) -> Result<Vec<Tensor<T>>> {
        let [f1, f2, _] = &feats.features;
        let mut x = feats.features[2].clone();
        // Level outputs at 1/2 and full, then 1/4, ordered finest first below.
        let mut outputs: Vec<Option<Tensor<T>>> = vec![None; 3];
        for (i, level) in self.levels.iter().enumerate() {
            let _s = profile::scope(&format!("level{}", 3 - i));
            x = bilinear_upsample(&level.before.forward(&x)?.leaky_relu(self.slope), 2)?;
            x = match i {
                0 => concat(&[&x, f2], 1)?,
                1 => concat(&[&x, f1], 1)?,
                _ => x,
            };
            x = level.after.forward(&x)?.leaky_relu(self.slope);
            // Level i ends at resolution 1/2^(3 - i).
            let scale = 3 - i;
            if scale < self.heads.len() {
                outputs[scale] = Some(x.clone());
            }
        }
        self.heads
            .iter()
            .enumerate()
            .map(|(s, head)| {
                let _s = profile::scope(&format!("disp{s}"));
                Ok(head.forward(outputs[s].as_ref().expect("level for every head"))?.sigmoid())
            })
            .collect()
    }
}

struct BasicBlock<T: Scalar> {
    conv1: Conv2d<T>,
    bn1: BatchNorm2d<T>,
    conv2: Conv2d<T>,
    bn2: BatchNorm2d<T>,
    shortcut: Option<(Conv2d<T>, BatchNorm2d<T>)>,
}

impl<T: Scalar> BasicBlock<T> {
    fn new(init: &mut Init<'_, T>, name: &str, cin: usize, cout: usize, stride: usize) -> Self {
        let mut sub = init.sub(name);
        let shortcut = (stride != 1 || cin != cout).then(|| {
            let conv = Conv2d::new(&mut sub, "down.conv", cin, cout, 1, Conv2dSpec::same(1, 1).with_stride(stride), false);
            (conv, BatchNorm2d::new(&mut sub, "down.bn", cout))
        });
        BasicBlock {
            conv1: Conv2d::new(&mut sub, "conv1", cin, cout, 3, Conv2dSpec::same(3, 1).with_stride(stride), false),
            bn1: BatchNorm2d::new(&mut sub, "bn1", cout),
            conv2: Conv2d::new(&mut sub, "conv2", cout, cout, 3, Conv2dSpec::same(3, 1), false),
            bn2: BatchNorm2d::new(&mut sub, "bn2", cout),
            shortcut,
        }
    }

    fn forward(&self, x: &Tensor<T>, ctx: &Ctx) -> Result<Tensor<T>> {
        let y = self.bn1.forward(&self.conv1.forward(x)?, ctx)?.leaky_relu(T::zero());
        let y = self.bn2.forward(&self.conv2.forward(&y)?, ctx)?;
        let skip = match &self.shortcut {
            Some((conv, bn)) => bn.forward(&conv.forward(x)?, ctx)?,
            None => x.clone(),
        };
        Ok(y.add(&skip)?.leaky_relu(T::zero()))
    }
}

/// Relative camera motion from a stacked (target, source) pair.
///
/// ResNet-18 layout at base width `w` (stages of two basic blocks at w, 2w,
/// 4w, 8w) on 6 input channels, then a four-layer convolutional head
/// reduced to a 6-vector by a spatial mean and scaled by 0.01. The vector is
/// (axis-angle, translation) of the target-to-source transform.
pub struct PoseNet<T: Scalar> {
    stem: Conv2d<T>,
    stem_bn: BatchNorm2d<T>,
    blocks: Vec<BasicBlock<T>>,
    squeeze: Conv2d<T>,
    head: [Conv2d<T>; 2],
    pub output: Conv2d<T>,
}

/// Output scale keeping initial motions small.
pub const POSE_SCALE: f64 = 0.01;

impl<T: Scalar> PoseNet<T> {
    pub fn new(init: &mut Init<'_, T>, name: &str, width: usize) -> Self {
        let mut sub = init.sub(name);
        let widths = [width, 2 * width, 4 * width, 8 * width];
        let mut blocks = Vec::with_capacity(8);
        let mut cin = width;
        for (s, &c) in widths.iter().enumerate() {
            for b in 0..2 {
                let stride = if s > 0 && b == 0 { 2 } else { 1 };
                blocks.push(BasicBlock::new(&mut sub, &format!("layer{}.{b}", s + 1), cin, c, stride));
                cin = c;
            }
        }
        let hidden = 4 * width;
        PoseNet {
            stem: Conv2d::new(&mut sub, "stem.conv", 6, width, 7, Conv2dSpec::same(7, 1).with_stride(2), false),
            stem_bn: BatchNorm2d::new(&mut sub, "stem.bn", width),
            blocks,
            squeeze: Conv2d::new(&mut sub, "squeeze", 8 * width, hidden, 1, Conv2dSpec::same(1, 1), true),
            head: [
                Conv2d::new(&mut sub, "head0", hidden, hidden, 3, Conv2dSpec::same(3, 1), true),
                Conv2d::new(&mut sub, "head1", hidden, hidden, 3, Conv2dSpec::same(3, 1), true),
            ],
            output: Conv2d::new(&mut sub, "output", hidden, 6, 1, Conv2dSpec::same(1, 1), true),
        }
    }

    /// `pair` is B×6×H×W (target then source channels); returns B×6.
    pub fn forward(&self, pair: &Tensor<T>, ctx: &Ctx) -> Result<Tensor<T>> {
        let [b, c, h, w] = pair.dims4("pose input")?;
        if c != 6 {
            return Err(dim_err!("pose input needs 6 channels (two RGB frames), got {c}"));
        }
        if h % 32 != 0 || w % 32 != 0 {
            return Err(dim_err!("pose input {h}x{w} must be divisible by 32"));
        }
        let relu = T::zero();
        let x = self.stem_bn.forward(&self.stem.forward(pair)?, ctx)?.leaky_relu(relu);
        let mut x = pool2d(&x, PoolMode::Max, PoolWindow::Window { size: 2, stride: 2 })?;
        for block in &self.blocks {
            x = block.forward(&x, ctx)?;
        }
        x = self.squeeze.forward(&x)?.leaky_relu(relu);
        for conv in &self.head {
            x = conv.forward(&x)?.leaky_relu(relu);
        }
        let v = self.output.forward(&x)?.mean_axes(&[2, 3])?;
        v.reshape(&[b, 6]).map(|v| v.mul_scalar(T::c(POSE_SCALE)))
    }
}

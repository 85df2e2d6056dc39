//! Architecture and training settings.

use std::fmt;
use std::str::FromStr;

use crate::error::{arg_err, dim_err, Error, Result};

/// Structural ablations; each removes or weakens one encoder component.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Ablation {
    /// Channel shuffles removed everywhere and every dilation forced to 1.
    AdjustSdc,
    /// Rotation attention removed from every stage.
    NoRaka,
    /// Dual-domain block removed from the last stage.
    NoDfsp,
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sdc" => Ok(Ablation::AdjustSdc),
            "raka" => Ok(Ablation::NoRaka),
            "dfsp" => Ok(Ablation::NoDfsp),
            other => Err(arg_err!("unknown ablation '{other}' (expected sdc, raka or dfsp)")),
        }
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Ablation::AdjustSdc => "sdc",
            Ablation::NoRaka => "raka",
            Ablation::NoDfsp => "dfsp",
        })
    }
}

/// Depth and pose network shapes.
///
/// Channel bookkeeping: the stem maps RGB to `stem_channels` at 1/2 and then
/// to `stage_channels[0]` at 1/4. Stages 2 and 3 take the average-pooled
/// previous stage output concatenated with the average-pooled input image
/// (3 extra channels) and project it to their own width.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub stem_channels: usize,
    pub stage_channels: [usize; 3],
    pub sdc_per_stage: [usize; 3],
    pub dilations: Vec<usize>,
    pub gamma: f64,
    pub learnable_mask: bool,
    pub raka_lambda_init: f64,
    pub sdc_dropout: f64,
    pub dfsp_dropout: f64,
    pub leaky_slope: f64,
    /// Decoder widths, finest level first.
    pub decoder_channels: [usize; 4],
    /// Number of disparity outputs (1 to 3), finest first.
    pub scales: usize,
    /// Base width of the pose encoder (64 for the classic ResNet-18).
    pub pose_width: usize,
    /// (height, width) the model is built for; the spectral mask depends on it.
    pub input_size: (usize, usize),
    pub ablation: Option<Ablation>,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            stem_channels: 36,
            stage_channels: [48, 80, 128],
            sdc_per_stage: [2, 2, 2],
            dilations: vec![1, 2, 3],
            gamma: 0.5,
            learnable_mask: true,
            raka_lambda_init: 1.0 / 3.0,
            sdc_dropout: 0.1,
            dfsp_dropout: 0.1,
            leaky_slope: 0.01,
            decoder_channels: [24, 40, 64, 128],
            scales: 3,
            pose_width: 24,
            input_size: (192, 640),
            ablation: None,
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// Small widths for single-core training on 64×64 synthetic scenes.
    pub fn toy() -> Self {
        ModelConfig {
            stem_channels: 8,
            stage_channels: [16, 24, 32],
            sdc_per_stage: [1, 1, 1],
            decoder_channels: [8, 8, 16, 16],
            pose_width: 8,
            input_size: (64, 64),
            ..ModelConfig::default()
        }
    }

    pub fn with_ablation(mut self, ablation: Option<Ablation>) -> Self {
        self.ablation = ablation;
        self
    }

    pub fn shuffles(&self) -> bool {
        self.ablation != Some(Ablation::AdjustSdc)
    }

    /// Dilation sequence after ablation.
    pub fn effective_dilations(&self) -> Vec<usize> {
        if self.ablation == Some(Ablation::AdjustSdc) {
            vec![1; self.dilations.len()]
        } else {
            self.dilations.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(c) = self.stage_channels.iter().find(|&&c| c == 0 || c % 2 != 0) {
            return Err(dim_err!("stage channel counts must be positive and even, got {c}"));
        }
        if self.dilations.is_empty() || self.dilations.contains(&0) {
            return Err(arg_err!("dilation sequence must be nonempty with entries >= 1"));
        }
        if self.sdc_per_stage.contains(&0) {
            return Err(arg_err!("every stage needs at least one shuffle-dilation block"));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(arg_err!("gamma {} outside [0, 1]", self.gamma));
        }
        for (what, p) in [("sdc_dropout", self.sdc_dropout), ("dfsp_dropout", self.dfsp_dropout)] {
            if !(0.0..1.0).contains(&p) {
                return Err(arg_err!("{what} {p} outside [0, 1)"));
            }
        }
        if !(1..=3).contains(&self.scales) {
            return Err(arg_err!("scales must be 1, 2 or 3, got {}", self.scales));
        }
        if self.stem_channels == 0 || self.pose_width == 0 || self.decoder_channels.contains(&0) {
            return Err(arg_err!("widths must be positive"));
        }
        let (h, w) = self.input_size;
        if h == 0 || w == 0 || h % 16 != 0 || w % 16 != 0 {
            return Err(dim_err!("input size {h}x{w} must be a positive multiple of 16 on both axes"));
        }
        Ok(())
    }
}

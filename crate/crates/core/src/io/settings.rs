//! Flat `key = value` configuration files.
//!
//! One setting per line; `#` starts a comment; blank lines are ignored.
//! Lists are comma separated and the input size is written `WxH`. Keys not
//! listed in [`KEYS`] are rejected with the byte offset of the key.

use std::path::Path;
use std::str::FromStr;

use crate::config::{Ablation, ModelConfig};
use crate::error::{Error, Result};
use crate::training::TrainConfig;

/// Every accepted key.
pub const KEYS: &[&str] = &[
    "stem_channels",
    "stage_channels",
    "sdc_per_stage",
    "dilations",
    "gamma",
    "learnable_mask",
    "raka_lambda_init",
    "sdc_dropout",
    "dfsp_dropout",
    "leaky_slope",
    "decoder_channels",
    "scales",
    "pose_width",
    "input",
    "ablate",
    "seed",
    "steps",
    "batch_size",
    "lr",
    "weight_decay",
    "eval_every",
    "train_scenes",
    "eval_scenes",
    "data_seed",
    "frames",
    "speed",
    "augment_probability",
    "alpha",
    "smoothness",
    "min_depth",
    "max_depth",
    "eval_cap",
    "median_scaling",
];

#[derive(Clone, Debug)]
pub struct Settings {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl Settings {
    /// Toy model and default training settings, scenes sized to the model input.
    pub fn toy() -> Self {
        let model = ModelConfig::toy();
        let mut train = TrainConfig::default();
        (train.scene.height, train.scene.width) = model.input_size;
        Settings { model, train }
    }
}

fn parse_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Parse { offset, message: message.into() }
}

fn scalar<V: FromStr>(text: &str, offset: usize, key: &str) -> Result<V> {
    text.parse().map_err(|_| parse_err(offset, format!("bad value '{text}' for {key}")))
}

fn list<V: FromStr>(text: &str, offset: usize, key: &str) -> Result<Vec<V>> {
    let mut out = Vec::new();
    let mut pos = offset;
    for part in text.split(',') {
        let lead = part.len() - part.trim_start().len();
        out.push(scalar(part.trim(), pos + lead, key)?);
        pos += part.len() + 1;
    }
    Ok(out)
}

fn array<const N: usize>(text: &str, offset: usize, key: &str) -> Result<[usize; N]> {
    let v: Vec<usize> = list(text, offset, key)?;
    v.try_into().map_err(|v: Vec<usize>| parse_err(offset, format!("{key} needs {N} entries, got {}", v.len())))
}

/// Parses `WxH` into (height, width).
pub fn parse_size(text: &str) -> Option<(usize, usize)> {
    let (w, h) = text.split_once(['x', 'X'])?;
    Some((h.trim().parse().ok()?, w.trim().parse().ok()?))
}

/// Applies the settings in `text` on top of `base`.
pub fn parse_onto(text: &str, mut s: Settings) -> Result<Settings> {
    let mut line_start = 0;
    for line in text.split_inclusive('\n') {
        let content = line.split('#').next().unwrap_or("");
        let offset_of = |sub: &str| line_start + (sub.as_ptr() as usize - line.as_ptr() as usize);
        if !content.trim().is_empty() {
            let (raw_key, raw_value) = content
                .split_once('=')
                .ok_or_else(|| parse_err(offset_of(content.trim_start()), "expected key = value"))?;
            let key = raw_key.trim();
            let value = raw_value.trim();
            let at = offset_of(if value.is_empty() { raw_value } else { value });
            let (m, t) = (&mut s.model, &mut s.train);
            match key {
                "stem_channels" => m.stem_channels = scalar(value, at, key)?,
                "stage_channels" => m.stage_channels = array(value, at, key)?,
                "sdc_per_stage" => m.sdc_per_stage = array(value, at, key)?,
                "dilations" => m.dilations = list(value, at, key)?,
                "gamma" => m.gamma = scalar(value, at, key)?,
                "learnable_mask" => m.learnable_mask = scalar(value, at, key)?,
                "raka_lambda_init" => m.raka_lambda_init = scalar(value, at, key)?,
                "sdc_dropout" => m.sdc_dropout = scalar(value, at, key)?,
                "dfsp_dropout" => m.dfsp_dropout = scalar(value, at, key)?,
                "leaky_slope" => m.leaky_slope = scalar(value, at, key)?,
                "decoder_channels" => m.decoder_channels = array(value, at, key)?,
                "scales" => m.scales = scalar(value, at, key)?,
                "pose_width" => m.pose_width = scalar(value, at, key)?,
                "input" => {
                    m.input_size = parse_size(value).ok_or_else(|| parse_err(at, format!("bad size '{value}', expected WxH")))?;
                    (t.scene.height, t.scene.width) = m.input_size;
                }
                "ablate" => {
                    m.ablation = match value {
                        "none" => None,
                        other => Some(Ablation::from_str(other).map_err(|e| parse_err(at, e.to_string()))?),
                    }
                }
                "seed" => t.seed = scalar(value, at, key)?,
                "steps" => t.steps = scalar(value, at, key)?,
                "batch_size" => t.batch_size = scalar(value, at, key)?,
                "lr" => t.base_lr = scalar(value, at, key)?,
                "weight_decay" => t.weight_decay = scalar(value, at, key)?,
                "eval_every" => t.eval_every = scalar(value, at, key)?,
                "train_scenes" => t.train_scenes = scalar(value, at, key)?,
                "eval_scenes" => t.eval_scenes = scalar(value, at, key)?,
                "data_seed" => t.data_seed = scalar(value, at, key)?,
                "frames" => t.scene.frames = scalar(value, at, key)?,
                "speed" => t.scene.speed = scalar(value, at, key)?,
                "augment_probability" => t.augment.probability = scalar(value, at, key)?,
                "alpha" => t.loss.alpha = scalar(value, at, key)?,
                "smoothness" => t.loss.smoothness = scalar(value, at, key)?,
                "min_depth" => t.loss.min_depth = scalar(value, at, key)?,
                "max_depth" => t.loss.max_depth = scalar(value, at, key)?,
                "eval_cap" => t.eval.cap = scalar(value, at, key)?,
                "median_scaling" => t.eval.median_scaling = scalar(value, at, key)?,
                _ => return Err(parse_err(offset_of(key), format!("unknown key '{key}'"))),
            }
        }
        line_start += line.len();
    }
    s.model.seed = s.train.seed;
    Ok(s)
}

pub fn parse(text: &str) -> Result<Settings> {
    parse_onto(text, Settings::toy())
}

pub fn load(path: &Path) -> Result<Settings> {
    parse(&std::fs::read_to_string(path)?)
}

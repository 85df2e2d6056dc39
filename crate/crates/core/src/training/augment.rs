//! Photometric and geometric augmentation of training triplets.
//!
//! Every operation fires independently with probability `probability` and
//! uses one draw for all three frames, so the frames stay mutually
//! consistent. The color operations, in application order:
//!
//! * brightness: `x·(1 + δ)`, δ ∈ [−b, b]
//! * contrast: `m + (1 + δ)(x − m)`, with `m` the mean luma of the center frame
//! * saturation: `g + (1 + δ)(x − g)`, with `g` the luma of the same pixel
//! * hue: rotation of the color vector about the gray axis by `2π·δ`
//!
//! Values are clamped to [0, 1] after each step. A horizontal flip mirrors
//! all frames and the principal point.

use rand::Rng;

use super::synthetic::Image;
use crate::depth::CameraIntrinsics;

const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

#[derive(Clone, Debug, PartialEq)]
pub struct AugmentSettings {
    pub probability: f64,
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    pub hue: f64,
}

impl Default for AugmentSettings {
    fn default() -> Self {
        AugmentSettings { probability: 0.5, brightness: 0.2, contrast: 0.2, saturation: 0.2, hue: 0.1 }
    }
}

impl AugmentSettings {
    pub fn disabled() -> Self {
        AugmentSettings { probability: 0.0, ..Default::default() }
    }
}

/// Which operations fired and with what factor.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Applied {
    pub flip: bool,
    pub brightness: Option<f64>,
    pub contrast: Option<f64>,
    pub saturation: Option<f64>,
    pub hue: Option<f64>,
}

/// Draws the augmentation parameters; the draw count is fixed so the stream
/// position after a call does not depend on which operations fired.
pub fn sample<R: Rng>(settings: &AugmentSettings, rng: &mut R) -> Applied {
    let mut pick = |range: f64| {
        let fire = rng.gen::<f64>() < settings.probability;
        let delta = rng.gen_range(-1.0..=1.0) * range;
        fire.then_some(delta)
    };
    let flip = pick(0.0).is_some();
    Applied {
        flip,
        brightness: pick(settings.brightness),
        contrast: pick(settings.contrast),
        saturation: pick(settings.saturation),
        hue: pick(settings.hue),
    }
}

pub fn flip_horizontal(image: &mut Image) {
    let w = image.width;
    for row in image.data.chunks_exact_mut(w) {
        row.reverse();
    }
}

pub fn adjust_brightness(image: &mut Image, delta: f64) {
    image.data.iter_mut().for_each(|v| *v = (*v * (1.0 + delta)).clamp(0.0, 1.0));
}

fn mean_luma(image: &Image) -> f64 {
    let plane = image.plane();
    (0..3).map(|c| LUMA[c] * image.data[c * plane..(c + 1) * plane].iter().sum::<f64>()).sum::<f64>() / plane as f64
}

pub fn adjust_contrast(image: &mut Image, delta: f64, mean: f64) {
    image.data.iter_mut().for_each(|v| *v = (mean + (1.0 + delta) * (*v - mean)).clamp(0.0, 1.0));
}

pub fn adjust_saturation(image: &mut Image, delta: f64) {
    let plane = image.plane();
    for p in 0..plane {
        let g: f64 = (0..3).map(|c| LUMA[c] * image.data[c * plane + p]).sum();
        for c in 0..3 {
            let v = &mut image.data[c * plane + p];
            *v = (g + (1.0 + delta) * (*v - g)).clamp(0.0, 1.0);
        }
    }
}

/// Rotates every color about the (1,1,1) axis by `turns` full revolutions.
pub fn rotate_hue(image: &mut Image, turns: f64) {
    let theta = std::f64::consts::TAU * turns;
    let (s, c) = theta.sin_cos();
    let u = 1.0 / 3f64.sqrt();
    // Rodrigues with the unit gray axis: R = cI + s[u]ₓ + (1 − c)uuᵀ.
    let (d, o) = (c + (1.0 - c) / 3.0, (1.0 - c) / 3.0);
    let r = [[d, o - s * u, o + s * u], [o + s * u, d, o - s * u], [o - s * u, o + s * u, d]];
    let plane = image.plane();
    for p in 0..plane {
        let x = [image.data[p], image.data[plane + p], image.data[2 * plane + p]];
        for (i, row) in r.iter().enumerate() {
            image.data[i * plane + p] = (row[0] * x[0] + row[1] * x[1] + row[2] * x[2]).clamp(0.0, 1.0);
        }
    }
}

/// Applies a drawn set of operations to the frames (center frame at index 1)
/// and mirrors the intrinsics when flipping.
pub fn apply(frames: &mut [Image; 3], intrinsics: &mut CameraIntrinsics, ops: &Applied) {
    if ops.flip {
        frames.iter_mut().for_each(flip_horizontal);
        *intrinsics = intrinsics.flipped(frames[1].width);
    }
    if let Some(d) = ops.brightness {
        frames.iter_mut().for_each(|f| adjust_brightness(f, d));
    }
    if let Some(d) = ops.contrast {
        let m = mean_luma(&frames[1]);
        frames.iter_mut().for_each(|f| adjust_contrast(f, d, m));
    }
    if let Some(d) = ops.saturation {
        frames.iter_mut().for_each(|f| adjust_saturation(f, d));
    }
    if let Some(d) = ops.hue {
        frames.iter_mut().for_each(|f| rotate_hue(f, d));
    }
}

pub fn augment<R: Rng>(frames: &mut [Image; 3], intrinsics: &mut CameraIntrinsics, settings: &AugmentSettings, rng: &mut R) -> Applied {
    let ops = sample(settings, rng);
    apply(frames, intrinsics, &ops);
    ops
}

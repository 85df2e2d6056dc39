//! Procedural scenes with exact depth and camera motion.
//!
//! A scene is a corridor (ground plane, two side walls, a far backdrop) with
//! a few axis-aligned boxes, every surface carrying a smooth color texture
//! defined in world coordinates. Frames are raycast per pixel with the same
//! pinhole model the warp uses, so consecutive frames agree photometrically
//! wherever the surface is visible in both.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::depth::{CameraIntrinsics, Pose};
use crate::error::{arg_err, Result};

/// Subpixel samples per axis when rendering color.
const SUPERSAMPLE: usize = 4;

/// Three-channel image stored channel-major (C×H×W).
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn plane(&self) -> usize {
        self.height * self.width
    }
}

/// One sinusoid of a surface texture.
#[derive(Clone, Debug)]
struct Wave {
    /// Spatial frequency (radians per meter) along the two surface axes.
    k: [f64; 2],
    phase: f64,
    /// Per-channel amplitude.
    amp: [f64; 3],
}

#[derive(Clone, Debug)]
struct Texture {
    base: [f64; 3],
    waves: Vec<Wave>,
}

impl Texture {
    fn random(rng: &mut ChaCha8Rng, wavelengths: (f64, f64)) -> Self {
        let base = std::array::from_fn(|_| rng.gen_range(0.3..0.7));
        let waves = (0..4)
            .map(|_| {
                let lambda = rng.gen_range(wavelengths.0..wavelengths.1);
                let angle: f64 = rng.gen_range(0.0..std::f64::consts::PI);
                let k = 2.0 * std::f64::consts::PI / lambda;
                Wave {
                    k: [k * angle.cos(), k * angle.sin()],
                    phase: rng.gen_range(0.0..std::f64::consts::TAU),
                    amp: std::array::from_fn(|_| rng.gen_range(0.02..0.07)),
                }
            })
            .collect();
        Texture { base, waves }
    }

    /// Color at surface coordinates `uv`, with every wave attenuated by the
    /// pixel footprint so detail finer than a pixel fades instead of aliasing.
    fn color(&self, uv: [f64; 2], footprint: f64) -> [f64; 3] {
        let mut c = self.base;
        for w in &self.waves {
            let kk = w.k[0] * w.k[0] + w.k[1] * w.k[1];
            let atten = (-0.5 * kk * footprint * footprint).exp();
            let s = (w.k[0] * uv[0] + w.k[1] * uv[1] + w.phase).sin() * atten;
            for ch in 0..3 {
                c[ch] += w.amp[ch] * s;
            }
        }
        c
    }
}

/// Axis-aligned box resting on the ground.
#[derive(Clone, Debug)]
struct Block {
    min: [f64; 3],
    max: [f64; 3],
    texture: Texture,
}

#[derive(Clone, Debug)]
pub struct SyntheticScene {
    pub seed: u64,
    pub intrinsics: CameraIntrinsics,
    pub height: usize,
    pub width: usize,
    /// Camera-to-world pose of every frame (camera axes: x right, y down, z forward).
    pub camera_track: Vec<Pose>,
    ground_y: f64,
    half_width: f64,
    backdrop_z: f64,
    ground: Texture,
    walls: [Texture; 2],
    backdrop: Texture,
    blocks: Vec<Block>,
}

/// Everything a training example needs from one time step.
#[derive(Clone, Debug)]
pub struct RenderedTriplet {
    pub prev: Image,
    pub current: Image,
    pub next: Image,
    /// Depth (meters along the optical axis) of the current frame, H×W.
    pub depth: Vec<f64>,
    /// Target-to-source motion for (prev, next).
    pub motion: [Pose; 2],
}

#[derive(Clone, Debug)]
pub struct SceneSettings {
    pub height: usize,
    pub width: usize,
    pub frames: usize,
    /// Forward motion per frame in meters.
    pub speed: f64,
}

impl Default for SceneSettings {
    fn default() -> Self {
        SceneSettings { height: 64, width: 64, frames: 8, speed: 0.4 }
    }
}

struct Hit {
    depth: f64,
    color: [f64; 3],
}

impl SyntheticScene {
    pub fn generate(seed: u64, settings: &SceneSettings) -> Result<Self> {
        if settings.frames < 3 || settings.height < 2 || settings.width < 2 {
            return Err(arg_err!("scenes need at least 3 frames and 2x2 pixels"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (h, w) = (settings.height, settings.width);
        let f = 0.58 * w as f64;
        let intrinsics = CameraIntrinsics::new(f, f, (w - 1) as f64 / 2.0, (h - 1) as f64 / 2.0)?;
        let ground_y = rng.gen_range(1.2..1.8);
        let half_width = rng.gen_range(3.0..6.0);
        let backdrop_z = rng.gen_range(30.0..45.0);
        let ground = Texture::random(&mut rng, (0.8, 3.0));
        let walls = [Texture::random(&mut rng, (0.8, 3.0)), Texture::random(&mut rng, (0.8, 3.0))];
        let backdrop = Texture::random(&mut rng, (4.0, 12.0));
        let blocks = (0..rng.gen_range(2..5))
            .map(|_| {
                let size = [rng.gen_range(0.6..1.8), rng.gen_range(0.6..2.2), rng.gen_range(0.6..1.8)];
                let x = rng.gen_range(-half_width + 0.5..half_width - 0.5 - size[0]);
                let z = rng.gen_range(6.0..22.0);
                Block {
                    min: [x, ground_y - size[1], z],
                    max: [x + size[0], ground_y, z + size[2]],
                    texture: Texture::random(&mut rng, (0.4, 1.5)),
                }
            })
            .collect();
        let lateral_amp = rng.gen_range(0.0..0.6);
        let lateral_phase = rng.gen_range(0.0..std::f64::consts::TAU);
        let camera_track = (0..settings.frames)
            .map(|t| {
                let s = t as f64;
                let x = lateral_amp * (0.5 * s + lateral_phase).sin();
                Pose::translation([x, 0.0, settings.speed * s])
            })
            .collect();
        Ok(SyntheticScene {
            seed,
            intrinsics,
            height: h,
            width: w,
            camera_track,
            ground_y,
            half_width,
            backdrop_z,
            ground,
            walls,
            backdrop,
            blocks,
        })
    }

    /// World size of one pixel on a surface point with normal along `axis`,
    /// seen from the closest camera of the track. Depending only on the point
    /// keeps colors identical in every frame that sees it.
    fn footprint(&self, p: [f64; 3], axis: usize) -> f64 {
        let f = self.intrinsics.fx;
        self.camera_track
            .iter()
            .map(|pose| {
                let d: [f64; 3] = std::array::from_fn(|i| p[i] - pose.translation[i]);
                let dist = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
                let cos = (d[axis].abs() / dist).max(0.05);
                dist / (f * cos)
            })
            .fold(f64::INFINITY, f64::min)
    }

    /// Nearest surface along `dir` (world frame, camera z component 1) from `origin`.
    fn trace<'a>(&'a self, origin: [f64; 3], dir: [f64; 3]) -> Hit {
        let at = |t: f64| -> [f64; 3] { std::array::from_fn(|i| origin[i] + t * dir[i]) };
        let mut best: Option<(f64, usize, &'a Texture, [f64; 2])> = None;
        let mut consider = |t: f64, axis: usize, texture: &'a Texture, uv: [f64; 2]| {
            if t > 1e-6 && best.as_ref().is_none_or(|b| t < b.0) {
                best = Some((t, axis, texture, uv));
            }
        };
        if dir[1] > 0.0 {
            let t = (self.ground_y - origin[1]) / dir[1];
            let p = at(t);
            consider(t, 1, &self.ground, [p[0], p[2]]);
        }
        for (side, texture) in [(-1.0, &self.walls[0]), (1.0, &self.walls[1])] {
            let x = side * self.half_width;
            if (x - origin[0]) * dir[0] > 0.0 {
                let t = (x - origin[0]) / dir[0];
                let p = at(t);
                consider(t, 0, texture, [p[2], p[1]]);
            }
        }
        if dir[2] > 0.0 {
            let t = (self.backdrop_z - origin[2]) / dir[2];
            let p = at(t);
            consider(t, 2, &self.backdrop, [p[0], p[1]]);
        }
        for b in &self.blocks {
            if let Some((t, axis)) = slab(origin, dir, b.min, b.max) {
                let p = at(t);
                let uv = match axis {
                    0 => [p[2], p[1]],
                    1 => [p[0], p[2]],
                    _ => [p[0], p[1]],
                };
                consider(t, axis, &b.texture, uv);
            }
        }
        let (t, axis, texture, uv) = best.expect("the backdrop closes every ray that moves forward");
        Hit { depth: t, color: texture.color(uv, self.footprint(at(t), axis)) }
    }

    /// Image and depth seen from frame `t`.
    pub fn render_frame(&self, t: usize) -> Result<(Image, Vec<f64>)> {
        let pose = self.camera_track.get(t).ok_or_else(|| arg_err!("frame {t} outside track of {}", self.camera_track.len()))?;
        let (h, w) = (self.height, self.width);
        let k = &self.intrinsics;
        let mut data = vec![0.0; 3 * h * w];
        let mut depth = vec![0.0; h * w];
        for y in 0..h {
            for x in 0..w {
                let ray = |u: f64, v: f64| -> [f64; 3] {
                    let d_cam = [(u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0];
                    let r = &pose.rotation;
                    std::array::from_fn(|i| r[i][0] * d_cam[0] + r[i][1] * d_cam[1] + r[i][2] * d_cam[2])
                };
                let p = y * w + x;
                depth[p] = self.trace(pose.translation, ray(x as f64, y as f64)).depth;
                // The pixel integrates light over its square, which turns
                // silhouettes into sub-pixel ramps rather than hard steps.
                let mut color = [0.0; 3];
                for sy in 0..SUPERSAMPLE {
                    for sx in 0..SUPERSAMPLE {
                        let offset = |i: usize| (i as f64 + 0.5) / SUPERSAMPLE as f64 - 0.5;
                        let hit = self.trace(pose.translation, ray(x as f64 + offset(sx), y as f64 + offset(sy)));
                        for c in 0..3 {
                            color[c] += hit.color[c].clamp(0.0, 1.0);
                        }
                    }
                }
                for c in 0..3 {
                    data[c * h * w + p] = color[c] / (SUPERSAMPLE * SUPERSAMPLE) as f64;
                }
            }
        }
        Ok((Image { height: h, width: w, data }, depth))
    }

    /// Target-to-source motion between frames.
    pub fn relative_motion(&self, target: usize, source: usize) -> Pose {
        self.camera_track[source].inverse().compose(&self.camera_track[target])
    }

    /// Frames t−1, t, t+1, the depth of frame t and the two motions.
    pub fn render_triplet(&self, t: usize) -> Result<RenderedTriplet> {
        if t == 0 || t + 1 >= self.camera_track.len() {
            return Err(arg_err!("triplet center {t} needs neighbours inside a track of {}", self.camera_track.len()));
        }
        let (prev, _) = self.render_frame(t - 1)?;
        let (current, depth) = self.render_frame(t)?;
        let (next, _) = self.render_frame(t + 1)?;
        Ok(RenderedTriplet { prev, current, next, depth, motion: [self.relative_motion(t, t - 1), self.relative_motion(t, t + 1)] })
    }

    /// Replaces the camera track (testing and custom trajectories).
    pub fn with_track(mut self, track: Vec<Pose>) -> Self {
        self.camera_track = track;
        self
    }
}

/// Ray/box intersection (slab method): entry distance and the axis of the entry face.
fn slab(origin: [f64; 3], dir: [f64; 3], min: [f64; 3], max: [f64; 3]) -> Option<(f64, usize)> {
    let (mut t0, mut t1, mut axis) = (f64::NEG_INFINITY, f64::INFINITY, 0);
    for i in 0..3 {
        if dir[i].abs() < 1e-12 {
            if origin[i] < min[i] || origin[i] > max[i] {
                return None;
            }
            continue;
        }
        let (mut a, mut b) = ((min[i] - origin[i]) / dir[i], (max[i] - origin[i]) / dir[i]);
        if a > b {
            std::mem::swap(&mut a, &mut b);
        }
        if a > t0 {
            t0 = a;
            axis = i;
        }
        t1 = t1.min(b);
    }
    (t0 <= t1 && t0 > 0.0).then_some((t0, axis))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scene(seed: u64) -> SyntheticScene {
        SyntheticScene::generate(seed, &SceneSettings::default()).unwrap()
    }

    #[test]
    fn depth_positive_and_images_in_range() {
        for seed in 0..4 {
            let s = scene(seed);
            let (img, depth) = s.render_frame(2).unwrap();
            assert!(depth.iter().all(|&d| d > 0.0 && d < 80.0));
            assert!(img.data.iter().all(|&v| (0.0..=1.0).contains(&v)));
            assert_eq!(img.data.len(), 3 * 64 * 64);
        }
    }

    #[test]
    fn identical_poses_give_identical_frames() {
        let s = scene(1).with_track(vec![Pose::translation([0.2, 0.0, 1.0]); 3]);
        let t = s.render_triplet(1).unwrap();
        assert_eq!(t.prev, t.current);
        assert_eq!(t.next, t.current);
    }

    #[test]
    fn out_of_track_is_an_argument_error() {
        let s = scene(2);
        assert!(matches!(s.render_triplet(0), Err(crate::Error::Argument(_))));
        assert!(matches!(s.render_triplet(7), Err(crate::Error::Argument(_))));
        assert!(s.render_frame(8).is_err());
    }

    #[test]
    fn lateral_motion_shifts_the_backdrop_by_focal_times_baseline_over_depth() {
        // Camera looking at the backdrop only: move it sideways and compare
        // where a backdrop point lands in both frames.
        let mut s = scene(3);
        s.blocks.clear();
        let t = 0.5;
        let s = s.with_track(vec![Pose::translation([0.0, -8.0, 0.0]), Pose::translation([t, -8.0, 0.0])]);
        let (_, depth) = s.render_frame(0).unwrap();
        let center = 32 * 64 + 32;
        let d = depth[center];
        assert!((d - s.backdrop_z).abs() < 1e-9);
        let motion = s.relative_motion(0, 1);
        let k = s.intrinsics;
        let p = [(32.0 - k.cx) / k.fx * d, (32.0 - k.cy) / k.fy * d, d];
        let q = motion.apply(p);
        let u = k.fx * q[0] / q[2] + k.cx;
        assert!((u - (32.0 - k.fx * t / d)).abs() < 1e-9);
    }
}

use crate::error::{arg_err, contract_err, dim_err, Result};
use crate::scalar::Scalar;
use crate::tensor::{sample_bilinear, Tensor};

/// Pinhole intrinsics in pixels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0) || !cx.is_finite() || !cy.is_finite() {
            return Err(arg_err!("focal lengths must be positive and the principal point finite"));
        }
        Ok(CameraIntrinsics { fx, fy, cx, cy })
    }

    pub fn matrix(&self) -> [[f64; 3]; 3] {
        [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
    }

    pub fn inverse_matrix(&self) -> [[f64; 3]; 3] {
        [
            [1.0 / self.fx, 0.0, -self.cx / self.fx],
            [0.0, 1.0 / self.fy, -self.cy / self.fy],
            [0.0, 0.0, 1.0],
        ]
    }

    /// Intrinsics of the horizontally mirrored image of the given width.
    pub fn flipped(&self, width: usize) -> Self {
        CameraIntrinsics { cx: (width - 1) as f64 - self.cx, ..*self }
    }

    /// Intrinsics after resizing the image by `factor` (pixel centers at
    /// integer coordinates, half-pixel aligned resampling).
    pub fn scaled(&self, factor: f64) -> Self {
        CameraIntrinsics {
            fx: self.fx * factor,
            fy: self.fy * factor,
            cx: (self.cx + 0.5) * factor - 0.5,
            cy: (self.cy + 0.5) * factor - 0.5,
        }
    }
}

pub type Mat3 = [[f64; 3]; 3];

pub fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

pub fn transpose(a: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = a[j][i];
        }
    }
    out
}

pub fn determinant(a: &Mat3) -> f64 {
    a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1]) - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
        + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
}

/// Rigid transform taking points from one camera frame to another:
/// x' = R·x + t.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    pub rotation: Mat3,
    pub translation: [f64; 3],
}

impl Pose {
    pub fn identity() -> Self {
        Pose { rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]], translation: [0.0; 3] }
    }

    pub fn translation(t: [f64; 3]) -> Self {
        Pose { translation: t, ..Pose::identity() }
    }

    /// From (axis-angle, translation).
    pub fn from_vector(v: [f64; 6]) -> Self {
        let coeffs = RotationCoefficients::new(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
        Pose { rotation: coeffs.matrix([v[0], v[1], v[2]]), translation: [v[3], v[4], v[5]] }
    }

    pub fn apply(&self, p: [f64; 3]) -> [f64; 3] {
        let r = &self.rotation;
        std::array::from_fn(|i| r[i][0] * p[0] + r[i][1] * p[1] + r[i][2] * p[2] + self.translation[i])
    }

    pub fn inverse(&self) -> Self {
        let rt = transpose(&self.rotation);
        let t = self.translation;
        Pose { rotation: rt, translation: std::array::from_fn(|i| -(rt[i][0] * t[0] + rt[i][1] * t[1] + rt[i][2] * t[2])) }
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &Pose) -> Self {
        let t = self.apply(other.translation);
        Pose { rotation: mat_mul(&self.rotation, &other.rotation), translation: t }
    }
}

/// R = cos θ·I + A·[ω]ₓ + B·ωωᵀ with A = sin θ/θ and B = (1 − cos θ)/θ²,
/// as functions of s = θ² together with their s-derivatives. Short series
/// replace the closed forms near zero where they cancel.
struct RotationCoefficients {
    c: f64,
    a: f64,
    b: f64,
    dc: f64,
    da: f64,
    db: f64,
}

impl RotationCoefficients {
    fn new(s: f64) -> Self {
        if s < 1e-3 {
            let a = 1.0 - s / 6.0 + s * s / 120.0 - s * s * s / 5040.0;
            let b = 0.5 - s / 24.0 + s * s / 720.0 - s * s * s / 40320.0;
            RotationCoefficients {
                c: 1.0 - s * b,
                a,
                b,
                dc: -a / 2.0,
                da: -1.0 / 6.0 + s / 60.0 - s * s / 1680.0,
                db: -1.0 / 24.0 + s / 360.0 - s * s / 13440.0,
            }
        } else {
            let theta = s.sqrt();
            let (sin, cos) = theta.sin_cos();
            let a = sin / theta;
            let half = (theta / 2.0).sin();
            let b = 2.0 * half * half / s;
            RotationCoefficients { c: cos, a, b, dc: -a / 2.0, da: (cos - a) / (2.0 * s), db: (a / 2.0 - b) / s }
        }
    }

    fn matrix(&self, w: [f64; 3]) -> Mat3 {
        let k = skew(w);
        std::array::from_fn(|i| {
            std::array::from_fn(|j| {
                let diag = if i == j { self.c } else { 0.0 };
                diag + self.a * k[i][j] + self.b * w[i] * w[j]
            })
        })
    }
}

fn skew(w: [f64; 3]) -> Mat3 {
    [[0.0, -w[2], w[1]], [w[2], 0.0, -w[0]], [-w[1], w[0], 0.0]]
}

/// Derivative of the skew matrix entry (i, j) with respect to ω_k.
fn dskew(i: usize, j: usize, k: usize) -> f64 {
    let e: Mat3 = skew(std::array::from_fn(|m| if m == k { 1.0 } else { 0.0 }));
    e[i][j]
}

/// Differentiable axis-angle to rotation matrix: B×3 → B×3×3.
pub fn axis_angle_to_matrix<T: Scalar>(omega: &Tensor<T>) -> Result<Tensor<T>> {
    if omega.rank() != 2 || omega.shape()[1] != 3 {
        return Err(dim_err!("axis-angle input must be Bx3, got {:?}", omega.shape()));
    }
    let b = omega.shape()[0];
    let w: Vec<[f64; 3]> = omega.data().chunks(3).map(|c| [c[0].f64(), c[1].f64(), c[2].f64()]).collect();
    let out = w
        .iter()
        .flat_map(|&wi| {
            let m = RotationCoefficients::new(wi.iter().map(|v| v * v).sum()).matrix(wi);
            m.into_iter().flatten().map(T::c).collect::<Vec<_>>()
        })
        .collect();
    Ok(Tensor::from_op(vec![b, 3, 3], out, &[omega], move || {
        Box::new(move |g: &[T]| {
            let mut grad = vec![T::zero(); b * 3];
            for (n, wi) in w.iter().enumerate() {
                let co = RotationCoefficients::new(wi.iter().map(|v| v * v).sum());
                let k = skew(*wi);
                let gn = &g[n * 9..][..9];
                for kk in 0..3 {
                    let mut acc = 0.0;
                    for i in 0..3 {
                        for j in 0..3 {
                            let diag = if i == j { co.dc } else { 0.0 };
                            let through_s = (diag + co.da * k[i][j] + co.db * wi[i] * wi[j]) * 2.0 * wi[kk];
                            let outer = (if i == kk { wi[j] } else { 0.0 }) + (if j == kk { wi[i] } else { 0.0 });
                            let direct = co.a * dskew(i, j, kk) + co.b * outer;
                            acc += gn[i * 3 + j].f64() * (through_s + direct);
                        }
                    }
                    grad[n * 3 + kk] = T::c(acc);
                }
            }
            vec![Some(grad)]
        })
    }))
}

/// A batch of poses as tensors: rotations B×3×3 and translations B×3.
#[derive(Clone, Debug)]
pub struct PoseBatch<T: Scalar> {
    pub rotation: Tensor<T>,
    pub translation: Tensor<T>,
}

impl<T: Scalar> PoseBatch<T> {
    /// From a B×6 tensor of (axis-angle, translation), differentiably.
    pub fn from_vector(v: &Tensor<T>) -> Result<Self> {
        if v.rank() != 2 || v.shape()[1] != 6 {
            return Err(dim_err!("pose vector must be Bx6, got {:?}", v.shape()));
        }
        Ok(PoseBatch { rotation: axis_angle_to_matrix(&v.narrow(1, 0, 3)?)?, translation: v.narrow(1, 3, 3)? })
    }

    pub fn from_poses(poses: &[Pose]) -> Result<Self> {
        let rot = poses.iter().flat_map(|p| p.rotation.into_iter().flatten()).map(T::c).collect();
        let tr = poses.iter().flat_map(|p| p.translation).map(T::c).collect();
        Ok(PoseBatch {
            rotation: Tensor::from_vec(&[poses.len(), 3, 3], rot)?,
            translation: Tensor::from_vec(&[poses.len(), 3], tr)?,
        })
    }

    pub fn len(&self) -> usize {
        self.rotation.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Plain-valued copies.
    pub fn to_poses(&self) -> Vec<Pose> {
        let (r, t) = (self.rotation.to_vec(), self.translation.to_vec());
        (0..self.len())
            .map(|n| Pose {
                rotation: std::array::from_fn(|i| std::array::from_fn(|j| r[n * 9 + i * 3 + j].f64())),
                translation: std::array::from_fn(|i| t[n * 3 + i].f64()),
            })
            .collect()
    }

    fn rot(&self, i: usize, j: usize) -> Result<Tensor<T>> {
        let b = self.len();
        self.rotation.narrow(1, i, 1)?.narrow(2, j, 1)?.reshape(&[b, 1, 1, 1])
    }

    fn trans(&self, i: usize) -> Result<Tensor<T>> {
        self.translation.narrow(1, i, 1)?.reshape(&[self.len(), 1, 1, 1])
    }
}

/// A source image resampled into the target view.
pub struct Warp<T: Scalar> {
    pub image: Tensor<T>,
    /// 1 where the reprojected point is in front of the source camera and
    /// inside the source image, else 0. Not differentiable.
    pub valid: Tensor<T>,
    pub u: Tensor<T>,
    pub v: Tensor<T>,
}

/// Coordinates slightly outside the image (by round-off) still count as inside.
const EDGE_SLACK: f64 = 1e-6;
/// Reprojected depths are kept at least this far in front of the camera.
const MIN_Z: f64 = 1e-6;

/// Back-projects every target pixel with `depth` (B×1×H×W), moves it by
/// `pose` (target to source) and samples `source` (B×C×H×W) where it lands.
pub fn project_and_warp<T: Scalar>(
    source: &Tensor<T>,
    depth: &Tensor<T>,
    pose: &PoseBatch<T>,
    intrinsics: &[CameraIntrinsics],
) -> Result<Warp<T>> {
    let [b, _, h, w] = source.dims4("warp source")?;
    let [bd, cd, hd, wd] = depth.dims4("warp depth")?;
    if (bd, cd, hd, wd) != (b, 1, h, w) {
        return Err(dim_err!("depth {:?} must be {b}x1x{h}x{w}", depth.shape()));
    }
    if pose.len() != b || intrinsics.len() != b {
        return Err(dim_err!("batch of {b} needs as many poses ({}) and intrinsics ({})", pose.len(), intrinsics.len()));
    }
    if let Some(i) = depth.data().iter().position(|&d| !(d > T::zero())) {
        return Err(contract_err!("depth must be positive, entry {i} is not"));
    }
    let plane = h * w;
    let mut rx = Vec::with_capacity(b * plane);
    let mut ry = Vec::with_capacity(b * plane);
    for k in intrinsics {
        for y in 0..h {
            for x in 0..w {
                rx.push(T::c((x as f64 - k.cx) / k.fx));
                ry.push(T::c((y as f64 - k.cy) / k.fy));
            }
        }
    }
    let per_batch = |f: fn(&CameraIntrinsics) -> f64| -> Result<Tensor<T>> {
        Tensor::from_vec(&[b, 1, 1, 1], intrinsics.iter().map(|k| T::c(f(k))).collect())
    };
    let x = depth.mul(&Tensor::from_vec(&[b, 1, h, w], rx)?)?;
    let y = depth.mul(&Tensor::from_vec(&[b, 1, h, w], ry)?)?;
    let z = depth;
    let row = |i: usize| -> Result<Tensor<T>> {
        pose.rot(i, 0)?.mul(&x)?.add(&pose.rot(i, 1)?.mul(&y)?)?.add(&pose.rot(i, 2)?.mul(z)?)?.add(&pose.trans(i)?)
    };
    let (xs, ys, zs) = (row(0)?, row(1)?, row(2)?);
    let zc = zs.clamp(T::c(MIN_Z), T::max_value());
    let u = per_batch(|k| k.fx)?.mul(&xs.div(&zc)?)?.add(&per_batch(|k| k.cx)?)?;
    let v = per_batch(|k| k.fy)?.mul(&ys.div(&zc)?)?.add(&per_batch(|k| k.cy)?)?;
    let valid = {
        let (ud, vd, zd) = (u.data(), v.data(), zs.data());
        let (wmax, hmax) = ((w - 1) as f64 + EDGE_SLACK, (h - 1) as f64 + EDGE_SLACK);
        let inside = |uu: f64, vv: f64, zz: f64| zz > 0.0 && uu >= -EDGE_SLACK && uu <= wmax && vv >= -EDGE_SLACK && vv <= hmax;
        let flags = (0..b * plane)
            .map(|i| if inside(ud[i].f64(), vd[i].f64(), zd[i].f64()) { T::one() } else { T::zero() })
            .collect();
        Tensor::from_vec(&[b, 1, h, w], flags)?
    };
    let image = sample_bilinear(source, &u, &v)?;
    Ok(Warp { image, valid, u, v })
}

/// depth = 1 / (1/max + (1/min − 1/max)·disp)
pub fn disp_to_depth<T: Scalar>(disp: &Tensor<T>, min_depth: f64, max_depth: f64) -> Result<Tensor<T>> {
    if !(min_depth > 0.0 && min_depth < max_depth && max_depth.is_finite()) {
        return Err(arg_err!("depth range ({min_depth}, {max_depth}) must satisfy 0 < min < max"));
    }
    let (lo, hi) = (1.0 / max_depth, 1.0 / min_depth);
    Ok(disp.mul_scalar(T::c(hi - lo)).add_scalar(T::c(lo)).recip())
}

/// Inverse of [`disp_to_depth`] on plain values.
pub fn depth_to_disp(depth: f64, min_depth: f64, max_depth: f64) -> f64 {
    let (lo, hi) = (1.0 / max_depth, 1.0 / min_depth);
    (1.0 / depth - lo) / (hi - lo)
}

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use super::{strides, Tensor};
use crate::error::{dim_err, Result};
use crate::scalar::Scalar;

/// Same-rank broadcasting plan: every axis of each operand is either equal
/// to the output axis or 1.
pub(crate) struct Broadcast {
    pub out: Vec<usize>,
    sa: Vec<usize>,
    sb: Vec<usize>,
}

impl Broadcast {
    pub(crate) fn new(a: &[usize], b: &[usize]) -> Result<Self> {
        if a.len() != b.len() {
            return Err(dim_err!("cannot broadcast shapes {a:?} and {b:?}: ranks differ"));
        }
        let mut out = Vec::with_capacity(a.len());
        for (axis, (&da, &db)) in a.iter().zip(b).enumerate() {
            let d = match (da, db) {
                _ if da == db => da,
                (1, _) => db,
                (_, 1) => da,
                _ => return Err(dim_err!("cannot broadcast shapes {a:?} and {b:?}: axis {axis} has {da} vs {db}")),
            };
            out.push(d);
        }
        let bstrides = |s: &[usize]| -> Vec<usize> {
            let st = strides(s);
            s.iter().zip(st).map(|(&d, st)| if d == 1 { 0 } else { st }).collect()
        };
        Ok(Broadcast { sa: bstrides(a), sb: bstrides(b), out })
    }

    /// Calls `f(out_index, a_index, b_index)` for every output element in
    /// row-major order.
    pub(crate) fn for_each(&self, mut f: impl FnMut(usize, usize, usize)) {
        let rank = self.out.len();
        if rank == 0 {
            f(0, 0, 0);
            return;
        }
        let last = rank - 1;
        let inner = self.out[last];
        let (ia_step, ib_step) = (self.sa[last], self.sb[last]);
        let outer: usize = self.out[..last].iter().product();
        let mut idx = vec![0usize; last];
        let mut o = 0;
        for _ in 0..outer {
            let mut ia: usize = idx.iter().zip(&self.sa).map(|(i, s)| i * s).sum();
            let mut ib: usize = idx.iter().zip(&self.sb).map(|(i, s)| i * s).sum();
            for _ in 0..inner {
                f(o, ia, ib);
                o += 1;
                ia += ia_step;
                ib += ib_step;
            }
            for ax in (0..last).rev() {
                idx[ax] += 1;
                if idx[ax] < self.out[ax] {
                    break;
                }
                idx[ax] = 0;
            }
        }
    }
}

#[derive(Clone, Copy)]
enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

fn binary<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, op: BinOp) -> Result<Tensor<T>> {
    let plan = Broadcast::new(a.shape(), b.shape())?;
    let n: usize = plan.out.iter().product();
    let mut out = vec![T::zero(); n];
    {
        let (ad, bd) = (a.data(), b.data());
        if a.shape() == b.shape() {
            for ((o, &x), &y) in out.iter_mut().zip(ad.iter()).zip(bd.iter()) {
                *o = apply(op, x, y);
            }
        } else {
            plan.for_each(|o, ia, ib| out[o] = apply(op, ad[ia], bd[ib]));
        }
    }
    let shape = plan.out.clone();
    let (ac, bc) = (a.clone(), b.clone());
    Ok(Tensor::from_op(shape, out, &[a, b], move || {
        Box::new(move |g: &[T]| {
            let (ad, bd) = (ac.data(), bc.data());
            let mut ga = ac.requires_grad().then(|| vec![T::zero(); ac.numel()]);
            let mut gb = bc.requires_grad().then(|| vec![T::zero(); bc.numel()]);
            plan.for_each(|o, ia, ib| {
                let (x, y, go) = (ad[ia], bd[ib], g[o]);
                let (dx, dy) = match op {
                    BinOp::Add => (go, go),
                    BinOp::Sub => (go, -go),
                    BinOp::Mul => (go * y, go * x),
                    BinOp::Div => (go / y, -go * x / (y * y)),
                };
                if let Some(ga) = ga.as_mut() {
                    ga[ia] += dx;
                }
                if let Some(gb) = gb.as_mut() {
                    gb[ib] += dy;
                }
            });
            vec![ga, gb]
        })
    }))
}

#[inline]
fn apply<T: Scalar>(op: BinOp, x: T, y: T) -> T {
    match op {
        BinOp::Add => x + y,
        BinOp::Sub => x - y,
        BinOp::Mul => x * y,
        BinOp::Div => x / y,
    }
}

/// Elementwise map with derivative `df(x)`.
fn unary<T: Scalar>(x: &Tensor<T>, f: impl Fn(T) -> T, df: impl Fn(T) -> T + 'static) -> Tensor<T> {
    let out: Vec<T> = x.data().iter().map(|&v| f(v)).collect();
    let xc = x.clone();
    Tensor::from_op(x.shape().to_vec(), out, &[x], move || {
        Box::new(move |g: &[T]| {
            let xd = xc.data();
            vec![Some(g.iter().zip(xd.iter()).map(|(&g, &v)| g * df(v)).collect())]
        })
    })
}

/// Pointwise nonlinearities used by the network.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    LeakyRelu(f64),
    /// Exact Gaussian-CDF form.
    Gelu,
    Sigmoid,
}

impl Activation {
    pub const LEAKY_DEFAULT: Activation = Activation::LeakyRelu(0.01);
}

#[inline]
fn sigmoid<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

#[inline]
fn gelu<T: Scalar>(v: T) -> T {
    T::c(0.5) * v * (T::one() + (v * T::c(FRAC_1_SQRT_2)).erf())
}

#[inline]
fn gelu_grad<T: Scalar>(v: T) -> T {
    let cdf = T::c(0.5) * (T::one() + (v * T::c(FRAC_1_SQRT_2)).erf());
    let pdf = (-(v * v) * T::c(0.5)).exp() / T::c((2.0 * PI).sqrt());
    cdf + v * pdf
}

impl<T: Scalar> Tensor<T> {
    pub fn add(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        binary(self, other, BinOp::Add)
    }

    pub fn sub(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        binary(self, other, BinOp::Sub)
    }

    pub fn mul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        binary(self, other, BinOp::Mul)
    }

    pub fn div(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        binary(self, other, BinOp::Div)
    }

    pub fn add_scalar(&self, c: T) -> Tensor<T> {
        unary(self, move |v| v + c, |_| T::one())
    }

    pub fn mul_scalar(&self, c: T) -> Tensor<T> {
        unary(self, move |v| v * c, move |_| c)
    }

    pub fn neg(&self) -> Tensor<T> {
        self.mul_scalar(-T::one())
    }

    pub fn exp(&self) -> Tensor<T> {
        unary(self, |v| v.exp(), |v| v.exp())
    }

    pub fn ln(&self) -> Tensor<T> {
        unary(self, |v| v.ln(), |v| T::one() / v)
    }

    pub fn sqrt(&self) -> Tensor<T> {
        unary(self, |v| v.sqrt(), |v| T::c(0.5) / v.sqrt())
    }

    pub fn square(&self) -> Tensor<T> {
        unary(self, |v| v * v, |v| v + v)
    }

    pub fn recip(&self) -> Tensor<T> {
        unary(self, |v| T::one() / v, |v| -T::one() / (v * v))
    }

    /// |x| with derivative sign(x), taken as 0 at 0.
    pub fn abs(&self) -> Tensor<T> {
        unary(
            self,
            |v| v.abs(),
            |v| {
                if v > T::zero() {
                    T::one()
                } else if v < T::zero() {
                    -T::one()
                } else {
                    T::zero()
                }
            },
        )
    }

    /// Clamp into `[lo, hi]`; the gradient is zero outside the interval.
    pub fn clamp(&self, lo: T, hi: T) -> Tensor<T> {
        unary(
            self,
            move |v| v.max(lo).min(hi),
            move |v| if v < lo || v > hi { T::zero() } else { T::one() },
        )
    }

    pub fn sigmoid(&self) -> Tensor<T> {
        unary(self, sigmoid, |v| {
            let s = sigmoid(v);
            s * (T::one() - s)
        })
    }

    pub fn leaky_relu(&self, slope: T) -> Tensor<T> {
        unary(
            self,
            move |v| if v >= T::zero() { v } else { v * slope },
            move |v| if v >= T::zero() { T::one() } else { slope },
        )
    }

    pub fn gelu(&self) -> Tensor<T> {
        unary(self, gelu, gelu_grad)
    }

    pub fn activation(&self, kind: Activation) -> Tensor<T> {
        match kind {
            Activation::LeakyRelu(slope) => self.leaky_relu(T::c(slope)),
            Activation::Gelu => self.gelu(),
            Activation::Sigmoid => self.sigmoid(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn t(shape: &[usize], v: Vec<f64>) -> Tensor<f64> {
        Tensor::from_vec(shape, v).unwrap()
    }

    #[test]
    fn activation_reference_values() {
        let x = t(&[1], vec![0.0]);
        assert_eq!(x.sigmoid().item(), 0.5);
        let y = t(&[1], vec![-1.0]);
        assert_eq!(y.activation(Activation::LEAKY_DEFAULT).item(), -0.01);
    }

    proptest! {
        // x Φ(x) − (−x) Φ(−x) = x Φ(x) + x (1 − Φ(x)) = x.
        #[test]
        fn gelu_odd_part_is_identity(v in -20.0f64..20.0) {
            let pos = t(&[1], vec![v]).gelu().item();
            let neg = t(&[1], vec![-v]).gelu().item();
            prop_assert!((pos - neg - v).abs() <= 1e-12 * (1.0 + v.abs()));
        }
    }

    #[test]
    fn broadcast_channel_vector() {
        let x = t(&[1, 2, 1, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let s = t(&[1, 2, 1, 1], vec![10.0, 100.0]);
        assert_eq!(x.mul(&s).unwrap().to_vec(), vec![10.0, 20.0, 300.0, 400.0]);
    }

    #[test]
    fn broadcast_gradient_reduces() {
        let x = Tensor::leaf(&[1, 2, 1, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let s = Tensor::leaf(&[1, 2, 1, 1], vec![10.0, 100.0]).unwrap();
        x.mul(&s).unwrap().sum().backward().unwrap();
        assert_eq!(s.grad().unwrap(), vec![3.0, 7.0]);
        assert_eq!(x.grad().unwrap(), vec![10.0, 10.0, 100.0, 100.0]);
    }

    #[test]
    fn broadcast_mismatch_names_axis() {
        let a = t(&[1, 2, 3], vec![0.0; 6]);
        let b = t(&[1, 3, 3], vec![0.0; 9]);
        let err = a.add(&b).unwrap_err().to_string();
        assert!(err.contains("axis 1"), "{err}");
    }
}

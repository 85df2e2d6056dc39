use super::{numel, strides, Tensor};
use crate::error::{arg_err, dim_err, Result};
use crate::scalar::Scalar;

/// Splits `shape` around the reduced axes into an odometer over
/// (kept-index, reduced-index) pairs.
struct AxisPlan {
    in_shape: Vec<usize>,
    out_shape: Vec<usize>,
    reduced: Vec<bool>,
}

impl AxisPlan {
    fn new(shape: &[usize], axes: &[usize]) -> Result<Self> {
        let mut reduced = vec![false; shape.len()];
        for &a in axes {
            if a >= shape.len() {
                return Err(dim_err!("reduction axis {a} out of range for shape {shape:?}"));
            }
            reduced[a] = true;
        }
        let out_shape = shape
            .iter()
            .zip(&reduced)
            .map(|(&d, &r)| if r { 1 } else { d })
            .collect();
        Ok(AxisPlan { in_shape: shape.to_vec(), out_shape, reduced })
    }

    /// Output offset for every input element, in input order.
    fn out_index(&self) -> Vec<usize> {
        let ost = strides(&self.out_shape);
        let n = numel(&self.in_shape);
        let mut idx = vec![0usize; self.in_shape.len()];
        let mut map = Vec::with_capacity(n);
        for _ in 0..n {
            let o: usize = idx
                .iter()
                .zip(&ost)
                .zip(&self.reduced)
                .map(|((&i, &s), &r)| if r { 0 } else { i * s })
                .sum();
            map.push(o);
            for ax in (0..idx.len()).rev() {
                idx[ax] += 1;
                if idx[ax] < self.in_shape[ax] {
                    break;
                }
                idx[ax] = 0;
            }
        }
        map
    }

    fn group_size(&self) -> usize {
        self.in_shape
            .iter()
            .zip(&self.reduced)
            .filter(|(_, &r)| r)
            .map(|(&d, _)| d)
            .product()
    }
}

impl<T: Scalar> Tensor<T> {
    /// Sum of all elements, shape `[1]`.
    pub fn sum(&self) -> Tensor<T> {
        let s: T = self.data().iter().copied().sum();
        let n = self.numel();
        Tensor::from_op(vec![1], vec![s], &[self], move || {
            Box::new(move |g: &[T]| vec![Some(vec![g[0]; n])])
        })
    }

    /// Mean of all elements, shape `[1]`.
    pub fn mean(&self) -> Tensor<T> {
        let n = self.numel();
        self.sum().mul_scalar(T::one() / T::c(n as f64))
    }

    /// Sum over `axes`, keeping them as length-1 axes.
    pub fn sum_axes(&self, axes: &[usize]) -> Result<Tensor<T>> {
        let plan = AxisPlan::new(self.shape(), axes)?;
        let map = plan.out_index();
        let mut out = vec![T::zero(); numel(&plan.out_shape)];
        for (&v, &o) in self.data().iter().zip(&map) {
            out[o] += v;
        }
        Ok(Tensor::from_op(plan.out_shape.clone(), out, &[self], move || {
            Box::new(move |g: &[T]| vec![Some(map.iter().map(|&o| g[o]).collect())])
        }))
    }

    pub fn mean_axes(&self, axes: &[usize]) -> Result<Tensor<T>> {
        let plan = AxisPlan::new(self.shape(), axes)?;
        let count = plan.group_size();
        Ok(self.sum_axes(axes)?.mul_scalar(T::one() / T::c(count as f64)))
    }

    /// Maximum along one axis (kept as length 1). The gradient goes to the
    /// first maximal element in index order.
    pub fn max_axis(&self, axis: usize) -> Result<Tensor<T>> {
        let plan = AxisPlan::new(self.shape(), &[axis])?;
        let map = plan.out_index();
        let nout = numel(&plan.out_shape);
        let mut out = vec![T::neg_infinity(); nout];
        let mut arg = vec![usize::MAX; nout];
        for (i, (&v, &o)) in self.data().iter().zip(&map).enumerate() {
            if arg[o] == usize::MAX || v > out[o] {
                out[o] = v;
                arg[o] = i;
            }
        }
        let n = self.numel();
        Ok(Tensor::from_op(plan.out_shape.clone(), out, &[self], move || {
            Box::new(move |g: &[T]| {
                let mut gi = vec![T::zero(); n];
                for (o, &i) in arg.iter().enumerate() {
                    gi[i] += g[o];
                }
                vec![Some(gi)]
            })
        }))
    }

    /// Elementwise minimum over equally shaped tensors. On ties the earliest
    /// tensor in `items` receives the gradient.
    pub fn minimum(items: &[Tensor<T>]) -> Result<Tensor<T>> {
        let first = items.first().ok_or_else(|| arg_err!("minimum of an empty sequence"))?;
        for (k, t) in items.iter().enumerate() {
            if t.shape() != first.shape() {
                return Err(dim_err!("minimum: item {k} has shape {:?}, expected {:?}", t.shape(), first.shape()));
            }
        }
        let n = first.numel();
        let mut out = first.to_vec();
        let mut arg = vec![0usize; n];
        for (k, t) in items.iter().enumerate().skip(1) {
            for (i, &v) in t.data().iter().enumerate() {
                if v < out[i] {
                    out[i] = v;
                    arg[i] = k;
                }
            }
        }
        let refs: Vec<&Tensor<T>> = items.iter().collect();
        let count = items.len();
        Ok(Tensor::from_op(first.shape().to_vec(), out, &refs, move || {
            Box::new(move |g: &[T]| {
                let mut grads = vec![vec![T::zero(); n]; count];
                for (i, &k) in arg.iter().enumerate() {
                    grads[k][i] = g[i];
                }
                grads.into_iter().map(Some).collect()
            })
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_axes_keeps_rank() {
        let x = Tensor::<f64>::from_vec(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let s = x.sum_axes(&[1]).unwrap();
        assert_eq!(s.shape(), &[2, 1]);
        assert_eq!(s.to_vec(), vec![6.0, 15.0]);
        let m = x.mean_axes(&[0]).unwrap();
        assert_eq!(m.to_vec(), vec![2.5, 3.5, 4.5]);
    }

    #[test]
    fn max_axis_first_on_ties() {
        let x = Tensor::<f64>::leaf(&[1, 3], vec![2.0, 2.0, 1.0]).unwrap();
        let m = x.max_axis(1).unwrap();
        assert_eq!(m.to_vec(), vec![2.0]);
        m.sum().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn minimum_routes_to_argmin() {
        let a = Tensor::<f64>::leaf(&[2, 2], vec![1.0, 5.0, 2.0, 0.0]).unwrap();
        let b = Tensor::<f64>::leaf(&[2, 2], vec![3.0, 1.0, 2.0, 4.0]).unwrap();
        let m = Tensor::minimum(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(m.to_vec(), vec![1.0, 1.0, 2.0, 0.0]);
        m.sum().backward().unwrap();
        assert_eq!(a.grad().unwrap(), vec![1.0, 0.0, 1.0, 1.0]);
        assert_eq!(b.grad().unwrap(), vec![0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn minimum_of_nothing_is_an_argument_error() {
        assert!(matches!(Tensor::<f64>::minimum(&[]), Err(crate::Error::Argument(_))));
    }
}

//! Dense tensors with reverse-mode differentiation.
//!
//! A [`Tensor`] is a reference-counted handle to a contiguous row-major
//! buffer. Operations on tensors that require gradients record a
//! [`GraphNode`] holding the parent handles and a closure mapping the
//! output gradient to per-parent gradients. [`Tensor::backward`] walks the
//! recorded graph once in decreasing creation order and accumulates
//! gradients into the leaves.
//!
//! Image features use the batch × channels × height × width layout.

mod conv;
mod elementwise;
mod gradcheck;
mod norm;
mod pool;
mod reduce;
mod sample;
mod shape_ops;

use std::cell::{Cell, Ref, RefCell, RefMut};
use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::rc::Rc;

use crate::error::{contract_err, dim_err, Result};
use crate::scalar::Scalar;

pub use conv::{conv2d, Conv2dSpec};
pub use elementwise::Activation;
pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport};
pub use norm::{batch_norm, layer_norm, BatchNormStats};
pub use pool::{pool2d, PoolMode, PoolWindow};
pub use sample::{bilinear_resize, bilinear_upsample, sample_bilinear};
pub use shape_ops::{channel_shuffle, channel_split, concat};

/// Maps the gradient of a node's output to the gradient of each parent.
/// `None` means the parent receives no contribution.
pub type BackwardFn<T> = Box<dyn Fn(&[T]) -> Vec<Option<Vec<T>>>>;

thread_local! {
    static NEXT_ID: Cell<u64> = const { Cell::new(0) };
}

fn next_id() -> u64 {
    NEXT_ID.with(|c| {
        let id = c.get();
        c.set(id + 1);
        id
    })
}

/// A recorded operation: parents plus the rule that differentiates it.
pub struct GraphNode<T: Scalar> {
    inputs: Vec<Tensor<T>>,
    backward: BackwardFn<T>,
}

struct TensorInner<T: Scalar> {
    id: u64,
    shape: Vec<usize>,
    data: RefCell<Vec<T>>,
    grad: RefCell<Option<Vec<T>>>,
    requires_grad: bool,
    node: Option<GraphNode<T>>,
}

/// Dense N-dimensional array handle. Cloning is cheap and shares storage.
pub struct Tensor<T: Scalar>(Rc<TensorInner<T>>);

impl<T: Scalar> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor(Rc::clone(&self.0))
    }
}

impl<T: Scalar> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("id", &self.0.id)
            .field("shape", &self.0.shape)
            .field("requires_grad", &self.0.requires_grad)
            .finish()
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<T: Scalar> Tensor<T> {
    fn build(shape: Vec<usize>, data: Vec<T>, requires_grad: bool, node: Option<GraphNode<T>>) -> Self {
        debug_assert_eq!(numel(&shape), data.len());
        Tensor(Rc::new(TensorInner {
            id: next_id(),
            shape,
            data: RefCell::new(data),
            grad: RefCell::new(None),
            requires_grad,
            node,
        }))
    }

    /// Constant tensor (never receives gradients).
    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        check_shape(shape, data.len())?;
        Ok(Self::build(shape.to_vec(), data, false, None))
    }

    /// Leaf tensor that accumulates gradients during backward.
    pub fn leaf(shape: &[usize], data: Vec<T>) -> Result<Self> {
        check_shape(shape, data.len())?;
        Ok(Self::build(shape.to_vec(), data, true, None))
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::build(shape.to_vec(), vec![T::zero(); numel(shape)], false, None)
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        Self::build(shape.to_vec(), vec![value; numel(shape)], false, None)
    }

    pub fn scalar(value: T) -> Self {
        Self::build(vec![1], vec![value], false, None)
    }

    /// Records the result of an operation. A graph node is attached only when
    /// some parent requires gradients; the backward closure is built lazily.
    pub(crate) fn from_op<F>(shape: Vec<usize>, data: Vec<T>, inputs: &[&Tensor<T>], make_backward: F) -> Self
    where
        F: FnOnce() -> BackwardFn<T>,
    {
        let requires_grad = inputs.iter().any(|t| t.requires_grad());
        let node = requires_grad.then(|| GraphNode {
            inputs: inputs.iter().map(|t| (*t).clone()).collect(),
            backward: make_backward(),
        });
        Self::build(shape, data, requires_grad, node)
    }

    pub fn id(&self) -> u64 {
        self.0.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn rank(&self) -> usize {
        self.0.shape.len()
    }

    pub fn numel(&self) -> usize {
        numel(&self.0.shape)
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.node.is_none()
    }

    pub fn data(&self) -> Ref<'_, Vec<T>> {
        self.0.data.borrow()
    }

    /// Mutable access to the storage. Intended for parameter updates between
    /// graph builds; mutating a tensor that an unfinished graph depends on
    /// invalidates that graph's gradients.
    pub fn data_mut(&self) -> RefMut<'_, Vec<T>> {
        self.0.data.borrow_mut()
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.data().clone()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> T {
        self.data()[0]
    }

    pub fn grad(&self) -> Option<Vec<T>> {
        self.0.grad.borrow().clone()
    }

    /// Resets the gradient buffer to zeros (allocating it if needed).
    pub fn zero_grad(&self) {
        if self.requires_grad() {
            *self.0.grad.borrow_mut() = Some(vec![T::zero(); self.numel()]);
        }
    }

    pub fn clear_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    /// Same values, cut from the graph.
    pub fn detach(&self) -> Self {
        Self::build(self.shape().to_vec(), self.to_vec(), false, None)
    }

    /// Shape as a fixed 4-tuple, or a dimension error naming `what`.
    pub fn dims4(&self, what: &str) -> Result<[usize; 4]> {
        match self.shape() {
            &[b, c, h, w] => Ok([b, c, h, w]),
            s => Err(dim_err!("{what}: expected a 4-D tensor (batch, channels, height, width), got shape {s:?}")),
        }
    }

    /// Runs reverse-mode differentiation from this scalar.
    ///
    /// Every reachable leaf with `requires_grad` accumulates
    /// d(self)/d(leaf) into its gradient buffer; repeated calls accumulate.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(contract_err!("backward requires a scalar loss, got shape {:?}", self.shape()));
        }
        if !self.requires_grad() {
            return Ok(());
        }
        // Collect every reachable tensor that participates in differentiation.
        let mut order: BTreeMap<u64, Tensor<T>> = BTreeMap::new();
        let mut stack = vec![self.clone()];
        while let Some(t) = stack.pop() {
            if order.contains_key(&t.id()) {
                continue;
            }
            if let Some(node) = &t.0.node {
                for p in &node.inputs {
                    if p.requires_grad() && !order.contains_key(&p.id()) {
                        stack.push(p.clone());
                    }
                }
            }
            order.insert(t.id(), t);
        }

        let mut grads: HashMap<u64, Vec<T>> = HashMap::new();
        grads.insert(self.id(), vec![T::one()]);
        // Parents always carry smaller ids than their children, so one pass
        // in decreasing id order sees every gradient complete.
        for (id, t) in order.iter().rev() {
            let Some(g) = grads.remove(id) else { continue };
            match &t.0.node {
                None => {
                    let mut slot = t.0.grad.borrow_mut();
                    match slot.as_mut() {
                        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += *b),
                        None => *slot = Some(g),
                    }
                }
                Some(node) => {
                    let parent_grads = (node.backward)(&g);
                    debug_assert_eq!(parent_grads.len(), node.inputs.len());
                    for (p, pg) in node.inputs.iter().zip(parent_grads) {
                        let Some(pg) = pg else { continue };
                        if !p.requires_grad() {
                            continue;
                        }
                        debug_assert_eq!(pg.len(), p.numel());
                        match grads.get_mut(&p.id()) {
                            Some(acc) => acc.iter_mut().zip(&pg).for_each(|(a, b)| *a += *b),
                            None => {
                                grads.insert(p.id(), pg);
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

fn check_shape(shape: &[usize], len: usize) -> Result<()> {
    if shape.contains(&0) {
        return Err(dim_err!("shape {shape:?} has a zero-length axis"));
    }
    if numel(shape) != len {
        return Err(dim_err!("shape {shape:?} holds {} values but {len} were given", numel(shape)));
    }
    Ok(())
}

/// Row-major strides for `shape`.
pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gradient_is_ones() {
        let x = Tensor::<f64>::leaf(&[2, 3], vec![1.0, -2.0, 3.0, 0.5, 0.0, 4.0]).unwrap();
        let loss = x.sum();
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0; 6]);
    }

    #[test]
    fn quadratic_gradient_is_two_x() {
        let vals = vec![1.0, -2.0, 3.0, 0.5];
        let x = Tensor::<f64>::leaf(&[4], vals.clone()).unwrap();
        x.mul(&x).unwrap().sum().backward().unwrap();
        let g = x.grad().unwrap();
        for (gi, vi) in g.iter().zip(&vals) {
            assert_eq!(*gi, 2.0 * vi);
        }
    }

    #[test]
    fn repeated_backward_accumulates() {
        let x = Tensor::<f64>::leaf(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        let loss = x.sum();
        loss.backward().unwrap();
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![2.0; 3]);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let x = Tensor::<f64>::leaf(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        assert!(matches!(x.backward(), Err(crate::Error::Contract(_))));
    }

    #[test]
    fn constants_never_get_grad_buffers() {
        let c = Tensor::<f64>::from_vec(&[2], vec![1.0, 2.0]).unwrap();
        let x = Tensor::<f64>::leaf(&[2], vec![3.0, 4.0]).unwrap();
        x.mul(&c).unwrap().sum().backward().unwrap();
        assert!(c.grad().is_none());
        c.zero_grad();
        assert!(c.grad().is_none());
        assert_eq!(x.grad().unwrap(), vec![1.0, 2.0]);
    }

    #[test]
    fn loss_linearity() {
        let x = Tensor::<f64>::leaf(&[3], vec![0.3, -1.2, 2.0]).unwrap();
        let l1 = x.mul(&x).unwrap().sum();
        let l2 = x.exp().sum();
        l1.add(&l2).unwrap().backward().unwrap();
        let joint = x.grad().unwrap();
        x.clear_grad();
        l1.backward().unwrap();
        l2.backward().unwrap();
        let split = x.grad().unwrap();
        for (a, b) in joint.iter().zip(&split) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn shared_subexpression_gradients_add() {
        let x = Tensor::<f64>::leaf(&[1], vec![3.0]).unwrap();
        let y = x.mul(&x).unwrap();
        y.add(&y).unwrap().sum().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![12.0]);
    }

    #[test]
    fn zero_length_axis_rejected() {
        assert!(Tensor::<f64>::from_vec(&[0, 2], vec![]).is_err());
        assert!(Tensor::<f64>::from_vec(&[2, 2], vec![1.0]).is_err());
    }
}

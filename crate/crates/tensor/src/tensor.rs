use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::autograd::{is_grad_enabled, Backward};
use crate::element::{DType, Element};
use crate::error::{Result, TensorError};

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_id() -> u64 {
    NEXT_ID.fetch_add(1, Ordering::Relaxed)
}

pub(crate) struct Node<T: Element> {
    pub(crate) op: Box<dyn Backward<T>>,
    pub(crate) inputs: Vec<Tensor<T>>,
}

struct Inner<T: Element> {
    id: u64,
    shape: Vec<usize>,
    data: Arc<Vec<T>>,
    requires_grad: bool,
    node: Option<Node<T>>,
}

/// An immutable, contiguous, row-major n-dimensional array.
///
/// Cloning is cheap (reference counted). A tensor that tracks gradients is
/// either a leaf (created with [`Tensor::requires_grad`]) or the output of an
/// op whose inputs track gradients; everything else is a plain constant.
pub struct Tensor<T: Element = f32> {
    inner: Arc<Inner<T>>,
}

impl<T: Element> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Self {
            inner: Arc::clone(&self.inner),
        }
    }
}

pub(crate) fn numel_of(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<T: Element> Tensor<T> {
    fn build(shape: Vec<usize>, data: Arc<Vec<T>>, requires_grad: bool, node: Option<Node<T>>) -> Self {
        debug_assert_eq!(numel_of(&shape), data.len());
        Self {
            inner: Arc::new(Inner {
                id: fresh_id(),
                shape,
                data,
                requires_grad,
                node,
            }),
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        if numel_of(shape) != data.len() {
            return Err(TensorError::DataLength {
                shape: shape.to_vec(),
                len: data.len(),
            });
        }
        Ok(Self::build(shape.to_vec(), Arc::new(data), false, None))
    }

    pub fn from_slice(shape: &[usize], data: &[T]) -> Result<Self> {
        Self::from_vec(shape, data.to_vec())
    }

    /// Builds a tensor from `f64` values, converting to `T`.
    pub fn from_f64s(shape: &[usize], data: &[f64]) -> Result<Self> {
        Self::from_vec(shape, data.iter().map(|&v| T::of(v)).collect())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        Self::build(shape.to_vec(), Arc::new(vec![value; numel_of(shape)]), false, None)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, T::one())
    }

    /// Rank-0 tensor.
    pub fn scalar(value: T) -> Self {
        Self::build(Vec::new(), Arc::new(vec![value]), false, None)
    }

    /// Same values as a new gradient-tracking leaf.
    pub fn requires_grad(&self) -> Self {
        Self::build(self.inner.shape.clone(), Arc::clone(&self.inner.data), true, None)
    }

    /// Same values, cut from any graph. Never receives gradients.
    pub fn detach(&self) -> Self {
        Self::build(self.inner.shape.clone(), Arc::clone(&self.inner.data), false, None)
    }

    pub(crate) fn from_op(
        shape: Vec<usize>,
        data: Vec<T>,
        op: impl Backward<T> + 'static,
        inputs: &[&Tensor<T>],
    ) -> Self {
        Self::from_op_shared(shape, Arc::new(data), op, inputs)
    }

    pub(crate) fn from_op_shared(
        shape: Vec<usize>,
        data: Arc<Vec<T>>,
        op: impl Backward<T> + 'static,
        inputs: &[&Tensor<T>],
    ) -> Self {
        let track = is_grad_enabled() && inputs.iter().any(|t| t.requires_grad_flag());
        if track {
            let node = Node {
                op: Box::new(op),
                inputs: inputs.iter().map(|t| (*t).clone()).collect(),
            };
            Self::build(shape, data, true, Some(node))
        } else {
            Self::build(shape, data, false, None)
        }
    }

    pub fn id(&self) -> u64 {
        self.inner.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn ndim(&self) -> usize {
        self.inner.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.inner.data.len()
    }

    pub fn dtype(&self) -> DType {
        T::DTYPE
    }

    pub fn data(&self) -> &[T] {
        &self.inner.data
    }

    pub(crate) fn shared_data(&self) -> Arc<Vec<T>> {
        Arc::clone(&self.inner.data)
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.inner.data.as_ref().clone()
    }

    pub fn requires_grad_flag(&self) -> bool {
        self.inner.requires_grad
    }

    /// True for tensors that track gradients but were not produced by an op.
    pub fn is_leaf(&self) -> bool {
        self.inner.requires_grad && self.inner.node.is_none()
    }

    /// Name of the op that produced this tensor, if it is part of a graph.
    pub fn op_name(&self) -> Option<&'static str> {
        self.inner.node.as_ref().map(|n| n.op.name())
    }

    pub(crate) fn node(&self) -> Option<&Node<T>> {
        self.inner.node.as_ref()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> T {
        assert_eq!(self.numel(), 1, "item() on tensor of shape {:?}", self.shape());
        self.inner.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.inner.data.iter().all(|v| v.is_finite())
    }

    /// Element-type conversion; the result is a constant.
    pub fn cast<U: Element>(&self) -> Tensor<U> {
        let data = self.data().iter().map(|v| U::of(v.as_f64())).collect();
        Tensor::from_vec(self.shape(), data).expect("same element count")
    }

    /// Bitwise equality of shape and element bytes.
    pub fn bit_eq(&self, other: &Tensor<T>) -> bool {
        if self.shape() != other.shape() {
            return false;
        }
        let mut a = Vec::new();
        let mut b = Vec::new();
        for (&x, &y) in self.data().iter().zip(other.data()) {
            a.clear();
            b.clear();
            x.extend_le_bytes(&mut a);
            y.extend_le_bytes(&mut b);
            if a != b {
                return false;
            }
        }
        true
    }

    /// Largest absolute elementwise difference. Shapes must match.
    pub fn max_abs_diff(&self, other: &Tensor<T>) -> f64 {
        assert_eq!(self.shape(), other.shape(), "max_abs_diff shape mismatch");
        self.data()
            .iter()
            .zip(other.data())
            .map(|(a, b)| (a.as_f64() - b.as_f64()).abs())
            .fold(0.0, f64::max)
    }
}

impl<T: Element> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let preview: Vec<T> = self.data().iter().take(8).copied().collect();
        f.debug_struct("Tensor")
            .field("shape", &self.shape())
            .field("dtype", &T::DTYPE)
            .field("requires_grad", &self.requires_grad_flag())
            .field("head", &preview)
            .finish()
    }
}

//! Differentiable tensor operations.

mod conv;
mod elementwise;
pub(crate) mod iter;
mod loss;
mod matmul;
mod reduce;
mod shape;

pub use conv::{avg_pool2d, conv2d, conv_output_len, global_avg_pool, max_pool2d};
pub use elementwise::{abs, add, add_scalar, div, exp, log, mul, neg, relu, scale, sqrt, square, sub};
pub use loss::{
    cosine_distance, log_softmax, mean_square, soft_cross_entropy, softmax_cross_entropy, softmax_detached,
};
pub use matmul::{linear, matmul, matmul_t};
pub use reduce::{broadcast_to, max_last_axis_detached, mean_all, mean_axes, sum_all, sum_axes, sum_to};
pub use shape::{flatten, index_select0, permute, reshape, sparse_map, SparseMap};

use crate::element::Element;
use crate::error::Result;
use crate::tensor::Tensor;

/// Method-call sugar over the free functions.
impl<T: Element> Tensor<T> {
    pub fn add(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        add(self, other)
    }

    pub fn sub(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        sub(self, other)
    }

    pub fn mul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        mul(self, other)
    }

    pub fn div(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        div(self, other)
    }

    pub fn scale(&self, c: T) -> Tensor<T> {
        scale(self, c)
    }

    pub fn relu(&self) -> Tensor<T> {
        relu(self)
    }

    pub fn sum_all(&self) -> Tensor<T> {
        sum_all(self)
    }

    pub fn mean_all(&self) -> Tensor<T> {
        mean_all(self)
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<T>> {
        reshape(self, shape)
    }

    pub fn flatten(&self) -> Result<Tensor<T>> {
        flatten(self)
    }

    pub fn matmul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        matmul(self, other)
    }
}

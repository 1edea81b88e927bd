//! Dense CPU tensors with reverse-mode automatic differentiation.
//!
//! The crate is deliberately small: row-major tensors of `f32`/`f64`, the ops a
//! convolutional classifier needs, gradients (including gradients of
//! gradients), SGD with momentum, a splittable PRNG and a binary checkpoint
//! format.

pub mod autograd;
pub mod checkpoint;
mod element;
mod error;
pub mod gradcheck;
pub mod ops;
pub mod optim;
pub mod prng;
mod tensor;

pub use autograd::{backward, grad, is_grad_enabled, no_grad, Gradients, NoGradGuard};
pub use element::{DType, Element};
pub use error::{Result, TensorError};
pub use optim::{sgd_momentum_step, SgdMomentum};
pub use prng::{prng_next_uniform, PrngState};
pub use tensor::Tensor;

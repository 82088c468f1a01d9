//! Dense `f64` tensors with a reverse-mode gradient tape.
//!
//! Storage is row-major and contiguous. Reshape shares storage; every other
//! layout change copies. The only broadcasting is the explicit
//! [`Tensor::expand`].

pub mod checkpoint;
pub mod error;
pub mod gradcheck;
pub mod nn;
mod ops;
mod tensor;

pub use checkpoint::{Checkpoint, NamedTensor};
pub use error::{Result, TensorError};
pub use nn::{Conv2d, GroupNorm, LayerNorm, Linear, Param, ParamBuilder, ParamSet};
pub use tensor::{is_grad_enabled, no_grad, Tape, Tensor};

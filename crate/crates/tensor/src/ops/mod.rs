//! Differentiable operations, implemented as inherent methods on
//! [`crate::Tensor`].

mod conv;
mod elementwise;
pub(crate) mod layout;
pub(crate) mod linalg;
mod norm;
pub(crate) mod reduce;
mod softmax;

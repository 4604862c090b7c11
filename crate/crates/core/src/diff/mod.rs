//! Reverse-mode differentiation: a recording tape of the ops the network
//! needs, each with an exact hand-written adjoint, plus finite-difference
//! oracles to verify them.

pub mod check;
mod kernels;
pub(crate) use kernels::warp_forward;
mod tape;
mod tensor;

pub use tape::{Gradients, OpKind, Tape, Var, GROUPNORM_EPS};
pub use tensor::Tensor;

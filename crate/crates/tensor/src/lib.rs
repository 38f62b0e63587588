//! Minimal dense tensors with tape-based reverse-mode differentiation,
//! covering exactly the operations a skeleton graph network needs.

pub mod checkpoint;
mod error;
pub mod gradcheck;
pub mod init;
pub mod ops;
mod param;
mod real;
mod tape;
mod tensor;

pub use error::{Result, TensorError};
pub use ops::{BatchStats, ReduceMode};
pub use param::{ParamId, ParamStore, Parameter, SelectionCache, Session};
pub use real::Real;
pub use tape::{Gradients, Tape, Var};
pub use tensor::{numel, strides, Tensor};

pub use ops::Activation;

//! Differentiable operations on [`Var`](crate::Var).

mod broadcast;
mod conv;
pub(crate) mod elementwise;
mod loss;
mod matmul;
mod norm;
mod reduce;
mod shape;

pub use broadcast::broadcast_shape;
pub use conv::strided_len;
pub use elementwise::Activation;
pub use loss::softmax_rows;
pub use norm::BatchStats;
pub use reduce::ReduceMode;

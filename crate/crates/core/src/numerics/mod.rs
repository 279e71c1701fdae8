//! Dense tensors, reverse-mode differentiation, Adam and checkpoints.

mod adam;
pub mod checkpoint;
pub mod gradcheck;
mod graph;
pub mod kernels;
mod param;
mod scalar;
mod tensor;

pub use adam::{adam_step, AdamConfig, OptimizerState, StepReport};
pub use graph::{Graph, Var};
pub use param::{Gradients, Group, ParamId, ParamStore, Parameter};
pub use scalar::Scalar;
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum NumericsError {
    #[error("{op}: dimension mismatch: {detail}")]
    Dimension { op: &'static str, detail: String },
    #[error("domain error: {0}")]
    Domain(String),
    #[error("contract violated: {0}")]
    Contract(String),
}

impl NumericsError {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        NumericsError::Dimension { op, detail: detail.into() }
    }
}

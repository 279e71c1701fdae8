//! Hierarchical residual codec: encoder, entropy branch, decoder branch.

mod config;
mod layers;
mod model;

pub use config::{ModelConfig, Variant};
pub use model::{
    matched_sequential_width, quantize_residual, Analysis, DecoderInput, LatentSource, Model, Quantizer, StageDecoder, StageVars,
};

use crate::entropy::EntropyError;
use crate::numerics::checkpoint::CheckpointError;
use crate::numerics::NumericsError;

#[derive(Debug, thiserror::Error)]
pub enum CodecError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Entropy(#[from] EntropyError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("contract violated: {0}")]
    Contract(String),
}

#[cfg(test)]
mod tests;

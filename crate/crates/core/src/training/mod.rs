//! Pre-training and the fine-tuning strategies, including knowledge replay.

mod config;
mod lambda;
mod loss;
mod train;

pub use config::{ReplayMix, Schedule, Strategy, TrainConfig};
pub use lambda::{sample_lambdas, LambdaDistribution};
pub use loss::{combined_loss, loss_kr, rd_loss, KrTerm, LossBreakdown, RdTerm};
pub use train::{finetune, pretrain, ReplayBuffer, TrainLog, TrainOutcome};

use crate::codec::CodecError;
use crate::data::DataError;
use crate::numerics::NumericsError;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("non-finite {term}: {value}")]
    NonFinite { term: String, value: f64 },
    #[error("training diverged at iteration {iter}: {term} is {value}")]
    Diverged { iter: usize, term: String, value: f64 },
    #[error("domain error: {0}")]
    Domain(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("contract violation: {0}")]
    Contract(String),
}

#[cfg(test)]
mod tests;

//! End-to-end continual-learning experiments: pre-train, archive old
//! bitstreams, fine-tune with each strategy, evaluate and summarize.

mod config;
mod report;
mod run;

pub use config::{ScenarioConfig, ScenarioName};
pub use report::{average_curves, Summary, SummaryRow};
pub use run::{
    finetune_stage, new_data_stage, pretrain_stage, run_scenario, run_seed, Archive, NewData, Pretrained, ScenarioOutcome, SeedRun,
    StrategyResult,
};

type BoxError = Box<dyn std::error::Error + Send + Sync>;

/// Failure of a named pipeline stage.
#[derive(Debug, thiserror::Error)]
#[error("stage `{stage}` failed: {source}")]
pub struct ScenarioError {
    pub stage: String,
    #[source]
    pub source: BoxError,
}

impl ScenarioError {
    pub fn new(stage: impl Into<String>, source: impl Into<BoxError>) -> Self {
        ScenarioError { stage: stage.into(), source: source.into() }
    }

    pub(crate) fn config(msg: String) -> Self {
        ScenarioError::new("config", msg)
    }
}

/// Receives progress messages and produced artifacts.
pub trait Observer {
    fn stage(&mut self, _message: &str) {}

    fn artifact(&mut self, _name: &str, _bytes: &[u8]) -> std::io::Result<()> {
        Ok(())
    }
}

/// Discards everything.
pub struct Silent;

impl Observer for Silent {}

pub(crate) trait StageExt<T> {
    fn stage(self, name: &str) -> Result<T, ScenarioError>;
}

impl<T, E: Into<BoxError>> StageExt<T> for Result<T, E> {
    fn stage(self, name: &str) -> Result<T, ScenarioError> {
        self.map_err(|e| ScenarioError::new(name, e))
    }
}

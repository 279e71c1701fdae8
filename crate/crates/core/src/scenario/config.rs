use serde::{Deserialize, Serialize};

use super::ScenarioError;
use crate::codec::{ModelConfig, Variant};
use crate::data::{DatasetSpec, SourceKind};
use crate::training::{Strategy, TrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioName {
    DataIncremental,
    RateIncLowToHigh,
    RateIncHighToLow,
}

impl ScenarioName {
    pub const ALL: [ScenarioName; 3] = [ScenarioName::DataIncremental, ScenarioName::RateIncLowToHigh, ScenarioName::RateIncHighToLow];

    pub fn as_str(self) -> &'static str {
        match self {
            ScenarioName::DataIncremental => "data_incremental",
            ScenarioName::RateIncLowToHigh => "rate_inc_low_to_high",
            ScenarioName::RateIncHighToLow => "rate_inc_high_to_low",
        }
    }
}

impl std::fmt::Display for ScenarioName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ScenarioName {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        ScenarioName::ALL.into_iter().find(|n| n.as_str() == s).ok_or_else(|| {
            format!("unknown scenario `{s}` (expected one of {})", ScenarioName::ALL.map(|n| n.as_str()).join(", "))
        })
    }
}

/// One continual-learning experiment: pre-training on the old data and
/// λ range, then fine-tuning towards new data or a new λ range.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: ScenarioName,
    pub model: ModelConfig,
    pub old_lambda: [f64; 2],
    pub new_lambda: [f64; 2],
    pub old_train: DatasetSpec,
    pub old_test: DatasetSpec,
    pub new_train: DatasetSpec,
    pub new_test: DatasetSpec,
    pub strategies: Vec<Strategy>,
    /// Replay weight of the kr strategy.
    pub alpha: f64,
    /// Additional kr runs, one per α; empty for none.
    #[serde(default)]
    pub alpha_grid: Vec<f64>,
    pub seeds: Vec<u64>,
    pub pretrain_iterations: usize,
    pub finetune_iterations: usize,
    pub batch_size: usize,
    /// Number of log-spaced λ values of the evaluation grids.
    pub grid_points: usize,
}

impl ScenarioConfig {
    pub fn preset(name: ScenarioName) -> Self {
        let old_lambda = [32.0, 1024.0];
        let a_train = DatasetSpec::new(SourceKind::SourceA, 100, 512);
        let a_test = DatasetSpec::new(SourceKind::SourceA, 200, 24);
        let (new_lambda, new_train, new_test) = match name {
            ScenarioName::DataIncremental => {
                (old_lambda, DatasetSpec::new(SourceKind::SourceB, 300, 512), DatasetSpec::new(SourceKind::SourceB, 400, 24))
            }
            ScenarioName::RateIncLowToHigh => ([32.0, 4096.0], a_train.clone(), a_test.clone()),
            ScenarioName::RateIncHighToLow => ([4.0, 1024.0], a_train.clone(), a_test.clone()),
        };
        ScenarioConfig {
            name,
            model: ModelConfig { lambda_low: old_lambda[0], lambda_high: old_lambda[1], ..ModelConfig::compact() },
            old_lambda,
            new_lambda,
            old_train: a_train,
            old_test: a_test,
            new_train,
            new_test,
            strategies: vec![Strategy::FtEnc, Strategy::FtEncDec, Strategy::Kr],
            alpha: 0.5,
            alpha_grid: vec![],
            seeds: vec![0],
            pretrain_iterations: 20_000,
            finetune_iterations: 5_000,
            batch_size: 8,
            grid_points: 8,
        }
    }

    pub fn with_variant(mut self, variant: Variant) -> Self {
        self.model.variant = variant;
        self
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let fail = |m: String| Err(ScenarioError::config(m));
        self.model.validate().map_err(|e| ScenarioError::config(e.to_string()))?;
        if [self.model.lambda_low, self.model.lambda_high] != self.old_lambda {
            return fail("model lambda range must equal the pre-training range".into());
        }
        for (n, r) in [("old", self.old_lambda), ("new", self.new_lambda)] {
            if !(r[0] > 0.0 && r[0] < r[1]) {
                return fail(format!("{n}_lambda [{}, {}] must satisfy 0 < low < high", r[0], r[1]));
            }
        }
        if self.strategies.contains(&Strategy::Pretrain) {
            return fail("pretrain is not a fine-tuning strategy".into());
        }
        if let Some(a) = self.alpha_grid.iter().chain([&self.alpha]).find(|a| !(0.0..=1.0).contains(*a)) {
            return fail(format!("alpha {a} outside [0, 1]"));
        }
        if self.seeds.is_empty() || self.grid_points < 4 || self.batch_size == 0 {
            return fail("need at least one seed, four grid points and a positive batch size".into());
        }
        Ok(())
    }

    /// Dataset spec of `spec` for run seed `seed`.
    pub fn seeded(spec: &DatasetSpec, seed: u64) -> DatasetSpec {
        DatasetSpec { seed: spec.seed.wrapping_add(seed.wrapping_mul(1_000_003)), ..spec.clone() }
    }

    pub fn pretrain_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            iterations: self.pretrain_iterations,
            batch_size: self.batch_size,
            lambda_low: self.old_lambda[0],
            lambda_high: self.old_lambda[1],
            ..TrainConfig::pretrain(seed)
        }
    }

    pub fn finetune_config(&self, strategy: Strategy, alpha: f64, seed: u64) -> TrainConfig {
        TrainConfig {
            alpha: if strategy == Strategy::Kr { alpha } else { 0.0 },
            iterations: self.finetune_iterations,
            batch_size: self.batch_size,
            lambda_low: self.new_lambda[0],
            lambda_high: self.new_lambda[1],
            ..TrainConfig::finetune(strategy, seed)
        }
    }

    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("scenario config serializes")
    }

    pub fn from_text(text: &str) -> Result<Self, ScenarioError> {
        let c: ScenarioConfig = toml::from_str(text).map_err(|e| ScenarioError::config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }
}

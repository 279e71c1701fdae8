use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::numerics::Group;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Pretrain,
    FtEnc,
    FtEncDec,
    Kr,
}

impl Strategy {
    pub fn trainable_groups(self) -> &'static [Group] {
        match self {
            Strategy::Pretrain => &[Group::Enc, Group::Dec, Group::Pz],
            Strategy::FtEnc => &[Group::Enc],
            Strategy::FtEncDec | Strategy::Kr => &[Group::Enc, Group::Dec],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Pretrain => "pretrain",
            Strategy::FtEnc => "ft_enc",
            Strategy::FtEncDec => "ft_enc_dec",
            Strategy::Kr => "kr",
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Strategy {
    type Err = TrainError;

    fn from_str(s: &str) -> Result<Self, TrainError> {
        match s {
            "pretrain" => Ok(Strategy::Pretrain),
            "ft_enc" => Ok(Strategy::FtEnc),
            "ft_enc_dec" => Ok(Strategy::FtEncDec),
            "kr" => Ok(Strategy::Kr),
            _ => Err(TrainError::Config(format!("unknown strategy `{s}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    Constant,
    /// Cosine decay to zero over the whole run.
    Cosine,
    /// Constant for the first half, cosine decay over the second.
    ConstantCosine,
}

impl Schedule {
    pub fn factor(self, iter: usize, total: usize) -> f64 {
        let cosine = |p: f64| 0.5 * (1.0 + (std::f64::consts::PI * p.clamp(0.0, 1.0)).cos());
        let total = total.max(1) as f64;
        match self {
            Schedule::Constant => 1.0,
            Schedule::Cosine => cosine(iter as f64 / total),
            Schedule::ConstantCosine => {
                let half = total / 2.0;
                if (iter as f64) < half {
                    1.0
                } else {
                    cosine((iter as f64 - half) / half)
                }
            }
        }
    }
}

/// How one fine-tuning iteration mixes new data and replayed data.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReplayMix {
    /// A full new-data batch and a full replay batch, weighted by α.
    TwoBatch,
    /// One batch whose items are split α-proportionally between the sources.
    SplitBatch,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub strategy: Strategy,
    pub alpha: f64,
    pub iterations: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub schedule: Schedule,
    pub grad_clip: Option<f64>,
    pub seed: u64,
    /// Bounds of the λ distribution of the rate-distortion term.
    pub lambda_low: f64,
    pub lambda_high: f64,
    pub ema_decay: Option<f64>,
    pub replay_mix: ReplayMix,
    /// Quantize replayed latents with noise instead of rounding.
    pub replay_noise: bool,
}

impl TrainConfig {
    pub fn pretrain(seed: u64) -> Self {
        TrainConfig {
            strategy: Strategy::Pretrain,
            alpha: 0.0,
            iterations: 20_000,
            batch_size: 32,
            lr: 2e-4,
            schedule: Schedule::ConstantCosine,
            grad_clip: Some(2.0),
            seed,
            lambda_low: 32.0,
            lambda_high: 1024.0,
            ema_decay: None,
            replay_mix: ReplayMix::TwoBatch,
            replay_noise: false,
        }
    }

    pub fn finetune(strategy: Strategy, seed: u64) -> Self {
        TrainConfig {
            strategy,
            alpha: if strategy == Strategy::Kr { 0.5 } else { 0.0 },
            iterations: 5_000,
            lr: 1e-4,
            schedule: Schedule::Cosine,
            ..TrainConfig::pretrain(seed)
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(TrainError::Domain(format!("alpha {} outside [0, 1]", self.alpha)));
        }
        if self.strategy != Strategy::Kr && self.alpha != 0.0 {
            return Err(TrainError::Config(format!("alpha is only used by kr, got {} for {}", self.alpha, self.strategy)));
        }
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(TrainError::Config(format!("learning rate {} must be positive", self.lr)));
        }
        if let Some(d) = self.ema_decay {
            if self.strategy != Strategy::Pretrain || !(0.0..1.0).contains(&d) {
                return Err(TrainError::Config(format!("ema_decay {d} needs strategy pretrain and a value in [0, 1)")));
            }
        }
        super::LambdaDistribution::new(self.lambda_low, self.lambda_high)?;
        Ok(())
    }

    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("train config serializes")
    }

    pub fn from_text(text: &str) -> Result<Self, TrainError> {
        let c: TrainConfig = toml::from_str(text).map_err(|e| TrainError::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }
}

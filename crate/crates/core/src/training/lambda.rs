use rand::Rng;
use serde::{Deserialize, Serialize};

use super::TrainError;

/// Log-uniform distribution of the rate-distortion trade-off λ.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LambdaDistribution {
    low: f64,
    high: f64,
}

impl LambdaDistribution {
    pub fn new(low: f64, high: f64) -> Result<Self, TrainError> {
        if !(low > 0.0 && low <= high && high.is_finite()) {
            return Err(TrainError::Domain(format!("lambda bounds [{low}, {high}] must satisfy 0 < low <= high")));
        }
        Ok(LambdaDistribution { low, high })
    }

    pub fn low(&self) -> f64 {
        self.low
    }

    pub fn high(&self) -> f64 {
        self.high
    }

    /// Geometric mean of the bounds.
    pub fn median(&self) -> f64 {
        (self.low * self.high).sqrt()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.low == self.high {
            return self.low;
        }
        let (a, b) = (self.low.ln(), self.high.ln());
        (a + (b - a) * rng.gen::<f64>()).exp().clamp(self.low, self.high)
    }

    /// `n` log-spaced values from `low` to `high` inclusive.
    pub fn grid(&self, n: usize) -> Vec<f64> {
        match n {
            0 => vec![],
            1 => vec![self.median()],
            _ => {
                let (a, b) = (self.low.ln(), self.high.ln());
                (0..n).map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp()).collect()
            }
        }
    }
}

/// λ of one batch: one draw per item.
pub fn sample_lambdas<R: Rng + ?Sized>(dist: &LambdaDistribution, n: usize, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| dist.sample(rng)).collect()
}

use serde::{Deserialize, Serialize};

use super::CodecError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Entropy and decoder branches run side by side.
    Parallel,
    /// The decoder starts from the last entropy feature; no `r` branch.
    Sequential,
}

impl std::str::FromStr for Variant {
    type Err = CodecError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "parallel" => Ok(Variant::Parallel),
            "sequential" => Ok(Variant::Sequential),
            _ => Err(CodecError::Config(format!("unknown variant `{s}` (expected parallel or sequential)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub stages: usize,
    pub latent_channels: usize,
    /// Feature width per stage, coarsest stage first.
    pub widths: Vec<usize>,
    /// Width of the entropy-branch features and of the `e_0`/`r_0` biases.
    pub context_width: usize,
    pub blocks_per_stage: usize,
    pub kernel: usize,
    pub embed_width: usize,
    /// Downsampling of the patchify layer; the finest stage sits at H/patch.
    pub patch: usize,
    pub variant: Variant,
    /// Decoder width of the sequential variant; `None` picks the width that
    /// matches the parallel model's parameter count.
    pub sequential_width: Option<usize>,
    pub lambda_low: f64,
    pub lambda_high: f64,
    pub sigma_floor: f64,
    pub seed: u64,
    /// Largest entropy-model share of all parameters accepted at build.
    #[serde(default)]
    pub pz_budget: Option<f64>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            stages: 2,
            latent_channels: 8,
            widths: vec![96, 64],
            context_width: 64,
            blocks_per_stage: 2,
            kernel: 7,
            embed_width: 32,
            patch: 4,
            variant: Variant::Parallel,
            sequential_width: None,
            lambda_low: 32.0,
            lambda_high: 1024.0,
            sigma_floor: 0.05,
            seed: 0,
            pz_budget: Some(0.25),
        }
    }
}

impl ModelConfig {
    /// Reduced widths and kernel for the training-heavy experiments on a
    /// single CPU core. Same stage layout and latent sizes as the default.
    pub fn compact() -> Self {
        ModelConfig { widths: vec![48, 32], context_width: 32, blocks_per_stage: 1, kernel: 3, embed_width: 16, ..Self::default() }
    }

    /// Narrow single-block model for quick experiments.
    pub fn tiny() -> Self {
        ModelConfig { widths: vec![24, 16], context_width: 16, blocks_per_stage: 1, kernel: 3, embed_width: 8, ..Self::default() }
    }

    /// Smallest configuration with every structural element, for gradient
    /// checks.
    pub fn micro() -> Self {
        ModelConfig {
            latent_channels: 2,
            widths: vec![6, 4],
            context_width: 8,
            blocks_per_stage: 1,
            kernel: 3,
            embed_width: 4,
            patch: 2,
            pz_budget: None,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), CodecError> {
        let fail = |m: String| Err(CodecError::Config(m));
        if self.stages == 0 {
            return fail("stages must be at least 1".into());
        }
        if self.widths.len() != self.stages {
            return fail(format!("{} widths given for {} stages", self.widths.len(), self.stages));
        }
        if self.widths.iter().chain([&self.context_width, &self.latent_channels, &self.embed_width]).any(|&w| w == 0) {
            return fail("channel widths must be positive".into());
        }
        if self.kernel % 2 == 0 {
            return fail(format!("kernel {} must be odd", self.kernel));
        }
        if self.patch == 0 {
            return fail("patch must be positive".into());
        }
        if !(self.lambda_low > 0.0 && self.lambda_low < self.lambda_high && self.lambda_high.is_finite()) {
            return fail(format!("lambda range [{}, {}] must satisfy 0 < low < high", self.lambda_low, self.lambda_high));
        }
        if !(self.sigma_floor > 0.0) {
            return fail("sigma_floor must be positive".into());
        }
        if self.sequential_width == Some(0) {
            return fail("sequential_width must be positive".into());
        }
        Ok(())
    }

    /// Spatial reduction from the image to the coarsest stage.
    pub fn total_downsampling(&self) -> usize {
        self.patch << (self.stages - 1)
    }

    /// Latent side length of each stage for an `h x w` image, coarsest first.
    pub fn stage_sizes(&self, h: usize, w: usize) -> Result<Vec<(usize, usize)>, CodecError> {
        let f = self.total_downsampling();
        if h == 0 || w == 0 || h % f != 0 || w % f != 0 {
            return Err(CodecError::Dimension(format!("image {h}x{w} is not divisible by the total downsampling {f}")));
        }
        Ok((0..self.stages).map(|i| (h / f << i, w / f << i)).collect())
    }

    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn from_text(text: &str) -> Result<Self, CodecError> {
        let c: ModelConfig = toml::from_str(text).map_err(|e| CodecError::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let c = ModelConfig { variant: Variant::Sequential, sequential_width: Some(70), ..ModelConfig::default() };
        assert_eq!(ModelConfig::from_text(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn stage_sizes_scale_with_input() {
        let c = ModelConfig::default();
        assert_eq!(c.stage_sizes(32, 32).unwrap(), vec![(4, 4), (8, 8)]);
        assert_eq!(c.stage_sizes(64, 64).unwrap(), vec![(8, 8), (16, 16)]);
        assert!(c.stage_sizes(36, 32).is_err());
    }

    #[test]
    fn rejects_inconsistent_widths() {
        let c = ModelConfig { widths: vec![8], ..ModelConfig::default() };
        assert!(c.validate().is_err());
        assert!(ModelConfig::default().validate().is_ok());
        assert!(ModelConfig::compact().validate().is_ok());
        assert!(ModelConfig::micro().validate().is_ok());
    }
}

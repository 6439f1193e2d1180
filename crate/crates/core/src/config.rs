//! TOML run configuration. Every table rejects unknown keys.
//!
//! ```toml
//! [train]
//! stage = "pretrain"
//! steps = 2000
//! dataset = "data/train"
//! checkpoint = "runs/stage1.ckpt"
//!
//! [codec]
//! latent_channels = 64
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::codec::CodecConfig;
use crate::discriminator::DiscriminatorConfig;
use crate::error::{CoreError, Result};
use crate::eval::EvalOptions;
use crate::labeler::LabelerConfig;
use crate::training::{RateTargetSchedule, Stage};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub stage: Stage,
    pub seed: u64,
    pub steps: u64,
    /// Defaults to 10,000 or half the run, whichever is smaller.
    pub warmup_steps: Option<u64>,
    /// Overrides the stage's default peak learning rate.
    pub peak_lr: Option<f64>,
    pub discriminator_lr: Option<f64>,
    pub batch_size: usize,
    pub crop: usize,
    /// Directory of PNG/PPM training images.
    pub dataset: Option<PathBuf>,
    /// When positive, train on this many synthetic textures instead.
    pub synthetic_images: usize,
    pub synthetic_size: usize,
    pub rate_preset: String,
    pub boost_steps: u64,
    pub lambda_d: f64,
    pub lambda_mse: f64,
    /// Output checkpoint.
    pub checkpoint: PathBuf,
    /// Stage-1 checkpoint fine-tuning starts from.
    pub init_checkpoint: Option<PathBuf>,
    pub labeler_checkpoint: Option<PathBuf>,
    /// Continue from `checkpoint` if it exists.
    pub resume: bool,
    pub metrics_log: Option<PathBuf>,
    pub log_every: u64,
    pub checkpoint_every: u64,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            stage: Stage::Pretrain,
            seed: 0,
            steps: 20_000,
            warmup_steps: None,
            peak_lr: None,
            discriminator_lr: None,
            batch_size: 8,
            crop: 256,
            dataset: None,
            synthetic_images: 0,
            synthetic_size: 64,
            rate_preset: "0.14".into(),
            boost_steps: 50_000,
            lambda_d: 0.008,
            lambda_mse: 150.0,
            checkpoint: PathBuf::from("illm.ckpt"),
            init_checkpoint: None,
            labeler_checkpoint: None,
            resume: false,
            metrics_log: None,
            log_every: 100,
            checkpoint_every: 1000,
        }
    }
}

impl TrainSection {
    pub fn warmup(&self) -> u64 {
        self.warmup_steps.unwrap_or_else(|| 10_000.min(self.steps / 2))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub train: TrainSection,
    pub codec: CodecConfig,
    pub labeler: LabelerConfig,
    pub discriminator: DiscriminatorConfig,
    pub eval: EvalOptions,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let c: Self = toml::from_str(text).map_err(|e| CoreError::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CoreError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| CoreError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let t = &self.train;
        if t.steps == 0 || t.batch_size == 0 {
            return Err(CoreError::Config("train.steps and train.batch_size must be positive".into()));
        }
        if t.warmup() >= t.steps {
            return Err(CoreError::Config("train.warmup_steps must be below train.steps".into()));
        }
        if t.crop == 0 || !t.crop.is_multiple_of(64) {
            return Err(CoreError::Config(format!("train.crop must be a positive multiple of 64, got {}", t.crop)));
        }
        if t.lambda_d < 0.0 || t.lambda_mse < 0.0 {
            return Err(CoreError::Config("loss weights must be nonnegative".into()));
        }
        RateTargetSchedule::preset(&t.rate_preset)?;
        self.codec.validate()?;
        self.labeler.validate()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_sections_and_rejects_unknown_keys() {
        let c = RunConfig::from_toml("[train]\nstage = \"finetune\"\nsteps = 100\n[codec]\nlatent_channels = 32\n").unwrap();
        assert_eq!(c.train.stage, Stage::Finetune);
        assert_eq!(c.train.warmup(), 50);
        assert_eq!(c.codec.latent_channels, 32);
        assert!(RunConfig::from_toml("[train]\nstpes = 3\n").is_err());
        assert!(RunConfig::from_toml("[trian]\n").is_err());
        assert!(RunConfig::from_toml("[train]\nrate_preset = \"0.5\"\n").is_err());
        let back = RunConfig::from_toml(&c.to_toml().unwrap()).unwrap();
        assert_eq!(back, c);
    }
}

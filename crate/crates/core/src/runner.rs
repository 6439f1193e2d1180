//! Config-driven training loop shared by the CLI and scripted runs.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::codec::HyperpriorCodec;
use crate::config::RunConfig;
use crate::data;
use crate::discriminator::{Discriminator, DiscriminatorKind};
use crate::error::{CoreError, Result};
use crate::image::Image;
use crate::labeler::VqLabeler;
use crate::losses::RandomConvNet;
use crate::training::{
    LabelerTrainer, MetricsLog, RateTargetSchedule, Stage, Stage1Trainer, Stage2Trainer, StagePlan,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub stage: Stage,
    pub steps: u64,
    pub checkpoint: PathBuf,
    pub last: Option<serde_json::Value>,
}

/// Training images named by the config: synthetic textures or a directory.
pub fn training_images(cfg: &RunConfig) -> Result<Vec<Image>> {
    let t = &cfg.train;
    if t.synthetic_images > 0 {
        return data::synthetic_textures(t.synthetic_images, t.synthetic_size, t.seed);
    }
    let dir = t
        .dataset
        .as_ref()
        .ok_or_else(|| CoreError::Config("train.dataset or train.synthetic_images is required".into()))?;
    let (ok, _) = data::load_dir(dir)?;
    if ok.is_empty() {
        return Err(CoreError::Config(format!("no readable images in {}", dir.display())));
    }
    Ok(ok.into_iter().map(|(_, img)| img).collect())
}

fn plan(base: StagePlan, cfg: &RunConfig, lr: Option<f64>) -> StagePlan {
    let p = base.with_warmup(cfg.train.warmup());
    match lr {
        Some(v) => p.with_peak_lr(v),
        None => p,
    }
}

fn extractor() -> Result<Box<RandomConvNet>> {
    Ok(Box::new(RandomConvNet::perceptual_default()?))
}

trait Runnable {
    fn position(&self) -> u64;
    fn advance(&mut self, batch: &candle_core::Tensor) -> Result<serde_json::Value>;
    fn snapshot(&self) -> Result<Checkpoint>;
}

macro_rules! runnable {
    ($t:ty) => {
        impl Runnable for $t {
            fn position(&self) -> u64 {
                self.step
            }
            fn advance(&mut self, batch: &candle_core::Tensor) -> Result<serde_json::Value> {
                Ok(serde_json::to_value(self.step(batch)?)?)
            }
            fn snapshot(&self) -> Result<Checkpoint> {
                self.checkpoint()
            }
        }
    };
}

runnable!(Stage1Trainer);
runnable!(Stage2Trainer);
runnable!(LabelerTrainer);

/// Drives a trainer to the configured total, logging and checkpointing
/// along the way.
fn drive(tr: &mut dyn Runnable, cfg: &RunConfig, images: &[Image]) -> Result<Option<serde_json::Value>> {
    let t = &cfg.train;
    let mut log = t.metrics_log.as_deref().map(MetricsLog::open).transpose()?;
    let mut last = None;
    for s in tr.position()..t.steps {
        let batch = data::sample_batch(images, t.batch_size, t.crop, t.seed, s)?;
        let v = tr.advance(&batch)?;
        let done = s + 1;
        if done % t.log_every.max(1) == 0 || done == t.steps {
            log::info!("{v}");
            if let Some(l) = log.as_mut() {
                l.write(&v)?;
            }
            last = Some(v);
        }
        if done % t.checkpoint_every.max(1) == 0 && done < t.steps {
            tr.snapshot()?.save(&t.checkpoint)?;
        }
    }
    tr.snapshot()?.save(&t.checkpoint)?;
    Ok(last)
}

/// Runs the configured stage to completion and writes its checkpoint.
pub fn run_training(cfg: &RunConfig) -> Result<TrainSummary> {
    cfg.validate()?;
    let t = &cfg.train;
    let images = training_images(cfg)?;
    let resume = t.resume && t.checkpoint.exists();
    let last = match t.stage {
        Stage::Pretrain => {
            let mut tr = if resume {
                Stage1Trainer::resume(&Checkpoint::load(&t.checkpoint)?, extractor()?)?
            } else {
                let sched = RateTargetSchedule::preset(&t.rate_preset)?.with_boost_steps(t.boost_steps);
                let codec = HyperpriorCodec::new(cfg.codec.clone(), t.seed)?;
                let mut tr = Stage1Trainer::new(codec, plan(StagePlan::pretrain(t.steps), cfg, t.peak_lr), sched, extractor()?, t.seed)?;
                tr.lambda_mse = t.lambda_mse;
                tr
            };
            drive(&mut tr, cfg, &images)?
        }
        Stage::Labeler => {
            let mut tr = if resume {
                LabelerTrainer::resume(&Checkpoint::load(&t.checkpoint)?, extractor()?)?
            } else {
                let l = VqLabeler::new(cfg.labeler.clone(), t.seed)?;
                LabelerTrainer::new(l, plan(StagePlan::labeler(t.steps), cfg, t.peak_lr), extractor()?, t.seed)?
            };
            drive(&mut tr, cfg, &images)?
        }
        Stage::Finetune => {
            let mut tr = if resume {
                Stage2Trainer::resume(&Checkpoint::load(&t.checkpoint)?, extractor()?)?
            } else {
                let init = t
                    .init_checkpoint
                    .as_ref()
                    .ok_or_else(|| CoreError::Training("stage 2 requires a stage-1 checkpoint (train.init_checkpoint)".into()))?;
                let stage1 = Checkpoint::load(init)?;
                let labeler = match (&t.labeler_checkpoint, cfg.discriminator.kind) {
                    (Some(p), _) => Some(VqLabeler::from_checkpoint(&Checkpoint::load(p)?)?),
                    (None, DiscriminatorKind::IllmUnet) => {
                        return Err(CoreError::Training(
                            "the ILLM discriminator needs train.labeler_checkpoint".into(),
                        ))
                    }
                    (None, DiscriminatorKind::Patchgan) => None,
                };
                let disc = Discriminator::new(cfg.discriminator.clone(), t.seed)?;
                let plan_g = plan(StagePlan::finetune(t.steps), cfg, t.peak_lr);
                let plan_d = plan(StagePlan::discriminator(cfg.discriminator.kind, t.steps), cfg, t.discriminator_lr);
                Stage2Trainer::from_stage1(&stage1, labeler, disc, plan_g, plan_d, t.lambda_d, extractor()?, t.seed)?
            };
            drive(&mut tr, cfg, &images)?
        }
    };
    Ok(TrainSummary {
        stage: t.stage,
        steps: t.steps,
        checkpoint: t.checkpoint.clone(),
        last,
    })
}

//! Two-stage training: rate-distortion pretraining with rate targeting, then
//! decoder-only adversarial fine-tuning; plus labeler pretraining.

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::codec::{self, HyperpriorCodec, QuantMode};
use crate::discriminator::{Discriminator, DiscriminatorKind};
use crate::error::{CoreError, Result};
use crate::labeler::VqLabeler;
use crate::losses::{self, LossWeights, PerceptualExtractor};
use crate::nn::{rng_for, AdamW, AdamWConfig, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Pretrain,
    Finetune,
    Labeler,
}

impl std::str::FromStr for Stage {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pretrain" | "1" => Ok(Self::Pretrain),
            "finetune" | "2" => Ok(Self::Finetune),
            "labeler" => Ok(Self::Labeler),
            other => Err(CoreError::Config(format!("unknown stage `{other}`"))),
        }
    }
}

/// Parameter groups of the full system.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    Encoder,
    HyperEncoder,
    HyperDecoder,
    HyperPrior,
    Decoder,
    Discriminator,
    Labeler,
}

impl ParamGroup {
    pub const CODEC: [ParamGroup; 5] = [
        Self::Encoder,
        Self::HyperEncoder,
        Self::HyperDecoder,
        Self::HyperPrior,
        Self::Decoder,
    ];

    /// Name prefix of the group inside the codec store, if it lives there.
    pub fn codec_prefix(self) -> Option<&'static str> {
        match self {
            Self::Encoder => Some(codec::ENCODER),
            Self::HyperEncoder => Some(codec::HYPER_ENCODER),
            Self::HyperDecoder => Some(codec::HYPER_DECODER),
            Self::HyperPrior => Some(codec::HYPER_PRIOR),
            Self::Decoder => Some(codec::DECODER),
            Self::Discriminator | Self::Labeler => None,
        }
    }
}

/// Which groups a stage may update.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FreezeMask {
    pub frozen: Vec<ParamGroup>,
    pub trainable: Vec<ParamGroup>,
}

impl FreezeMask {
    pub fn is_frozen(&self, g: ParamGroup) -> bool {
        self.frozen.contains(&g)
    }

    /// Codec store prefixes that are trainable under this mask.
    pub fn codec_prefixes(&self) -> Vec<&'static str> {
        self.trainable.iter().filter_map(|g| g.codec_prefix()).collect()
    }
}

pub fn freeze_plan(stage: Stage) -> FreezeMask {
    use ParamGroup::*;
    let (frozen, trainable) = match stage {
        Stage::Pretrain => (vec![Discriminator, Labeler], ParamGroup::CODEC.to_vec()),
        Stage::Finetune => (vec![Encoder, HyperEncoder, HyperDecoder, HyperPrior, Labeler], vec![Decoder, Discriminator]),
        Stage::Labeler => {
            let mut f = ParamGroup::CODEC.to_vec();
            f.push(Discriminator);
            (f, vec![Labeler])
        }
    };
    FreezeMask { frozen, trainable }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StagePlan {
    pub stage: Stage,
    pub total_steps: u64,
    pub warmup_steps: u64,
    pub peak_lr: f64,
    pub betas: (f64, f64),
    pub weight_decay: f64,
}

impl StagePlan {
    pub fn pretrain(total_steps: u64) -> Self {
        Self {
            stage: Stage::Pretrain,
            total_steps,
            warmup_steps: 10_000,
            peak_lr: 3e-4,
            betas: (0.9, 0.999),
            weight_decay: 5e-5,
        }
    }

    /// Decoder plan for adversarial fine-tuning.
    pub fn finetune(total_steps: u64) -> Self {
        Self {
            stage: Stage::Finetune,
            peak_lr: 1e-4,
            betas: (0.5, 0.9),
            ..Self::pretrain(total_steps)
        }
    }

    /// Discriminator plan; ILLM trains at 4e-4, PatchGAN at 1e-4.
    pub fn discriminator(kind: DiscriminatorKind, total_steps: u64) -> Self {
        Self {
            peak_lr: match kind {
                DiscriminatorKind::IllmUnet => 4e-4,
                DiscriminatorKind::Patchgan => 1e-4,
            },
            ..Self::finetune(total_steps)
        }
    }

    pub fn labeler(total_steps: u64) -> Self {
        Self {
            stage: Stage::Labeler,
            ..Self::pretrain(total_steps)
        }
    }

    pub fn with_warmup(mut self, warmup_steps: u64) -> Self {
        self.warmup_steps = warmup_steps;
        self
    }

    pub fn with_peak_lr(mut self, lr: f64) -> Self {
        self.peak_lr = lr;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.total_steps == 0 || self.warmup_steps >= self.total_steps {
            return Err(CoreError::Config(format!(
                "warmup_steps ({}) must be below total_steps ({})",
                self.warmup_steps, self.total_steps
            )));
        }
        if !(self.peak_lr > 0.0) || self.weight_decay < 0.0 {
            return Err(CoreError::Config("peak_lr must be positive and weight_decay nonnegative".into()));
        }
        Ok(())
    }

    pub fn adamw(&self) -> AdamWConfig {
        AdamWConfig {
            beta1: self.betas.0,
            beta2: self.betas.1,
            weight_decay: self.weight_decay,
            ..AdamWConfig::default()
        }
    }
}

/// Linear warmup from 0 to the peak, then cosine decay to 0 at `total_steps`.
pub fn lr_at_step(step: u64, plan: &StagePlan) -> Result<f64> {
    if step > plan.total_steps {
        return Err(CoreError::Training(format!("step {step} beyond total_steps {}", plan.total_steps)));
    }
    if step <= plan.warmup_steps && plan.warmup_steps > 0 {
        return Ok(plan.peak_lr * (step as f64 / plan.warmup_steps as f64));
    }
    let span = (plan.total_steps - plan.warmup_steps).max(1) as f64;
    let progress = (step - plan.warmup_steps) as f64 / span;
    Ok(plan.peak_lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateTargetSchedule {
    pub target_bpp: f64,
    pub lambda_a: f64,
    pub lambda_b: f64,
    pub boost_steps: u64,
    pub boost_factor: f64,
    pub lambda_a_early_scale: f64,
}

/// The eight `(target bpp, λa, λb)` presets.
pub const RATE_PRESETS: [(f64, f64, f64); 8] = [
    (0.00875, 32.0, 0.0625),
    (0.0175, 16.0, 0.0625),
    (0.035, 8.0, 0.0625),
    (0.07, 4.0, 0.0625),
    (0.14, 2.0, 0.0625),
    (0.30, 1.0, 0.0625),
    (0.45, 0.5, 0.0625),
    (0.9, 0.25, 0.0625),
];

impl RateTargetSchedule {
    pub fn new(target_bpp: f64, lambda_a: f64, lambda_b: f64) -> Result<Self> {
        let s = Self {
            target_bpp,
            lambda_a,
            lambda_b,
            boost_steps: 50_000,
            boost_factor: 1.429,
            lambda_a_early_scale: 0.5,
        };
        s.validate()?;
        Ok(s)
    }

    /// Preset by its target rate, written as in the table (`"0.14"`, `"0.00875"`).
    pub fn preset(name: &str) -> Result<Self> {
        let t: f64 = name
            .trim()
            .parse()
            .map_err(|_| CoreError::Config(format!("rate preset `{name}` is not a number")))?;
        RATE_PRESETS
            .iter()
            .find(|p| p.0 == t)
            .map(|&(t, a, b)| Self::new(t, a, b))
            .unwrap_or_else(|| Err(CoreError::Config(format!("no rate preset for target {name}"))))
    }

    pub fn with_boost_steps(mut self, steps: u64) -> Self {
        self.boost_steps = steps;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.target_bpp > 0.0) || !(self.lambda_b > 0.0) || !(self.lambda_a > self.lambda_b) {
            return Err(CoreError::Config("rate schedule needs target > 0 and λa > λb > 0".into()));
        }
        if !(self.boost_factor > 0.0) || !(self.lambda_a_early_scale > 0.0) {
            return Err(CoreError::Config("boost factor and early scale must be positive".into()));
        }
        Ok(())
    }
}

/// Rate weight for the current step: the (possibly halved) λa when the empirical
/// rate exceeds the (possibly boosted) target, λb otherwise. Also returns the
/// effective target.
pub fn rate_lambda(step: u64, empirical_bpp: f64, sched: &RateTargetSchedule) -> (f64, f64) {
    let early = step < sched.boost_steps;
    let target = if early { sched.target_bpp * sched.boost_factor } else { sched.target_bpp };
    let lambda_a = if early { sched.lambda_a * sched.lambda_a_early_scale } else { sched.lambda_a };
    if empirical_bpp > target {
        (lambda_a, target)
    } else {
        (sched.lambda_b, target)
    }
}

/// Exponential moving average of batch bpp.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateController {
    pub decay: f64,
    pub ema: Option<f64>,
}

impl Default for RateController {
    fn default() -> Self {
        Self { decay: 0.9, ema: None }
    }
}

impl RateController {
    pub fn update(&mut self, bpp: f64) -> f64 {
        let v = match self.ema {
            Some(e) => self.decay * e + (1.0 - self.decay) * bpp,
            None => bpp,
        };
        self.ema = Some(v);
        v
    }
}

/// Append-only JSON-lines log.
pub struct MetricsLog {
    out: BufWriter<File>,
}

impl MetricsLog {
    pub fn open(path: &Path) -> Result<Self> {
        let f = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self { out: BufWriter::new(f) })
    }

    pub fn write<T: Serialize>(&mut self, record: &T) -> Result<()> {
        serde_json::to_writer(&mut self.out, record)?;
        self.out.write_all(b"\n")?;
        self.out.flush()?;
        Ok(())
    }
}

/// Bookkeeping section stored with every training checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingState {
    pub stage: Stage,
    pub step: u64,
    pub seed: u64,
    pub plan: StagePlan,
    #[serde(default)]
    pub rate_schedule: Option<RateTargetSchedule>,
    #[serde(default)]
    pub rate_controller: Option<RateController>,
    #[serde(default)]
    pub lambda_d: Option<f64>,
    #[serde(default)]
    pub lambda_mse: f64,
}

const STATE_SECTION: &str = "training_state";

fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

fn zero() -> Result<Tensor> {
    Ok(Tensor::zeros((), DType::F32, &Device::Cpu)?)
}

fn optimizer_for(store: &ParamStore, prefixes: &[&str], plan: &StagePlan) -> AdamW {
    AdamW::new(store.params_with_prefix(prefixes), plan.adamw())
}

fn put_optimizer(ckpt: &mut Checkpoint, name: &str, opt: &AdamW) -> Result<()> {
    ckpt.put_group(name, opt.export_state());
    ckpt.set_section(&format!("{name}_steps"), &opt.steps())
}

fn load_optimizer(ckpt: &Checkpoint, name: &str, opt: &mut AdamW) -> Result<()> {
    let steps: u64 = ckpt.section(&format!("{name}_steps"))?;
    opt.import_state(&ckpt.group(name), steps)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage1Metrics {
    pub step: u64,
    pub lr: f64,
    pub bpp: f64,
    pub bpp_ema: f64,
    pub distortion: f64,
    pub mse: f64,
    pub lambda_rate: f64,
    pub target_bpp: f64,
    pub loss: f64,
}

/// Stage 1: rate-distortion pretraining of every codec group.
pub struct Stage1Trainer {
    pub codec: HyperpriorCodec,
    pub plan: StagePlan,
    pub schedule: RateTargetSchedule,
    pub controller: RateController,
    pub lambda_mse: f64,
    pub seed: u64,
    pub step: u64,
    opt: AdamW,
    extractor: Box<dyn PerceptualExtractor>,
}

impl Stage1Trainer {
    pub fn new(
        codec: HyperpriorCodec,
        plan: StagePlan,
        schedule: RateTargetSchedule,
        extractor: Box<dyn PerceptualExtractor>,
        seed: u64,
    ) -> Result<Self> {
        plan.validate()?;
        schedule.validate()?;
        let opt = optimizer_for(&codec.store, &freeze_plan(Stage::Pretrain).codec_prefixes(), &plan);
        Ok(Self {
            codec,
            plan,
            schedule,
            controller: RateController::default(),
            lambda_mse: LossWeights::default().mse,
            seed,
            step: 0,
            opt,
            extractor,
        })
    }

    pub fn extractor(&self) -> &dyn PerceptualExtractor {
        self.extractor.as_ref()
    }

    pub fn step(&mut self, batch: &Tensor) -> Result<Stage1Metrics> {
        let lr = lr_at_step(self.step + 1, &self.plan)?;
        let mut rng = rng_for(self.seed ^ 0x6e6f_6973, self.step);
        let out = self.codec.forward_train(batch, &mut rng)?;
        let bpp = out.bpp()?;
        let bpp_v = scalar(&bpp)?;
        let ema = self.controller.update(bpp_v);
        let (lambda, target) = rate_lambda(self.step, ema, &self.schedule);
        let dist = losses::distortion(&out.x_hat, batch, self.lambda_mse, Some(self.extractor.as_ref()))?;
        let mse = scalar(&out.x_hat.sub(batch)?.sqr()?.mean_all()?)?;
        let w = LossWeights {
            rate: lambda,
            distortion: 1.0,
            adversarial: 0.0,
            mse: self.lambda_mse,
        };
        let loss = losses::total_objective(&bpp, &dist, &zero()?, &w)?;
        let loss_v = scalar(&loss)?;
        if !loss_v.is_finite() {
            return Err(CoreError::Training(format!("non-finite loss at step {}", self.step)));
        }
        let grads = loss.backward()?;
        self.opt.step(&grads, lr)?;
        self.step += 1;
        Ok(Stage1Metrics {
            step: self.step,
            lr,
            bpp: bpp_v,
            bpp_ema: ema,
            distortion: scalar(&dist)?,
            mse,
            lambda_rate: lambda,
            target_bpp: target,
            loss: loss_v,
        })
    }

    fn state(&self) -> TrainingState {
        TrainingState {
            stage: Stage::Pretrain,
            step: self.step,
            seed: self.seed,
            plan: self.plan.clone(),
            rate_schedule: Some(self.schedule),
            rate_controller: Some(self.controller),
            lambda_d: None,
            lambda_mse: self.lambda_mse,
        }
    }

    pub fn checkpoint(&self) -> Result<Checkpoint> {
        let mut c = Checkpoint::new();
        self.codec.write_checkpoint(&mut c)?;
        c.set_section(STATE_SECTION, &self.state())?;
        put_optimizer(&mut c, "optim_codec", &self.opt)?;
        Ok(c)
    }

    pub fn resume(ckpt: &Checkpoint, extractor: Box<dyn PerceptualExtractor>) -> Result<Self> {
        let st: TrainingState = ckpt.section(STATE_SECTION)?;
        if st.stage != Stage::Pretrain {
            return Err(CoreError::Checkpoint(format!("checkpoint is from stage {:?}, not pretrain", st.stage)));
        }
        let schedule = st.rate_schedule.ok_or_else(|| CoreError::Checkpoint("missing rate schedule".into()))?;
        let codec = HyperpriorCodec::from_checkpoint(ckpt)?;
        let mut t = Self::new(codec, st.plan, schedule, extractor, st.seed)?;
        t.step = st.step;
        t.lambda_mse = st.lambda_mse;
        t.controller = st.rate_controller.unwrap_or_default();
        load_optimizer(ckpt, "optim_codec", &mut t.opt)?;
        Ok(t)
    }
}

/// Rate-distortion objective `bpp + ρ` of the deterministic (rounded) path,
/// averaged over batches. Used to compare checkpoints on equal terms.
pub fn rd_objective(
    codec: &HyperpriorCodec,
    batches: &[Tensor],
    lambda_mse: f64,
    extractor: &dyn PerceptualExtractor,
) -> Result<f64> {
    let mut total = 0.0;
    for x in batches {
        let (x_hat, y_hat, ep) = codec.forward_eval(x)?;
        let (b, _, h, w) = x.dims4()?;
        let bits = (codec.likelihood_bits(&y_hat, &ep.means, &ep.scales)?.sum_all()? + ep.hyper_bits.sum_all()?)?;
        let bpp = scalar(&bits)? / (b * h * w) as f64;
        total += bpp + scalar(&losses::distortion(&x_hat, x, lambda_mse, Some(extractor))?)?;
    }
    Ok(total / batches.len().max(1) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage2Metrics {
    pub step: u64,
    pub lr_g: f64,
    pub lr_d: f64,
    pub loss_d: f64,
    pub loss_g: f64,
    pub distortion: f64,
    pub bpp: f64,
    /// Fraction of real locations whose arg-max logit is the true label (ILLM),
    /// or classified real (PatchGAN).
    pub real_accuracy: f64,
}

/// Stage 2: alternating discriminator / decoder updates with encoder and
/// entropy model frozen.
pub struct Stage2Trainer {
    pub codec: HyperpriorCodec,
    pub labeler: Option<VqLabeler>,
    pub disc: Discriminator,
    pub plan_g: StagePlan,
    pub plan_d: StagePlan,
    pub lambda_d: f64,
    pub lambda_mse: f64,
    pub seed: u64,
    pub step: u64,
    opt_g: AdamW,
    opt_d: AdamW,
    extractor: Box<dyn PerceptualExtractor>,
}

impl Stage2Trainer {
    /// Starts fine-tuning from a finished stage-1 checkpoint.
    #[allow(clippy::too_many_arguments)]
    pub fn from_stage1(
        stage1: &Checkpoint,
        labeler: Option<VqLabeler>,
        disc: Discriminator,
        plan_g: StagePlan,
        plan_d: StagePlan,
        lambda_d: f64,
        extractor: Box<dyn PerceptualExtractor>,
        seed: u64,
    ) -> Result<Self> {
        let st: TrainingState = stage1
            .section(STATE_SECTION)
            .map_err(|_| CoreError::Training("stage 2 requires a stage-1 checkpoint".into()))?;
        if st.stage != Stage::Pretrain {
            return Err(CoreError::Training(format!("stage 2 requires a stage-1 checkpoint, got {:?}", st.stage)));
        }
        let codec = HyperpriorCodec::from_checkpoint(stage1)?;
        Self::new(codec, labeler, disc, plan_g, plan_d, lambda_d, st.lambda_mse, extractor, seed)
    }

    #[allow(clippy::too_many_arguments)]
    fn new(
        codec: HyperpriorCodec,
        labeler: Option<VqLabeler>,
        disc: Discriminator,
        plan_g: StagePlan,
        plan_d: StagePlan,
        lambda_d: f64,
        lambda_mse: f64,
        extractor: Box<dyn PerceptualExtractor>,
        seed: u64,
    ) -> Result<Self> {
        plan_g.validate()?;
        plan_d.validate()?;
        if !(lambda_d >= 0.0) {
            return Err(CoreError::Config("lambda_d must be nonnegative".into()));
        }
        if disc.config.kind == DiscriminatorKind::IllmUnet {
            let l = labeler
                .as_ref()
                .ok_or_else(|| CoreError::Training("the ILLM discriminator needs a trained labeler".into()))?;
            if l.config.classes != disc.config.classes {
                return Err(CoreError::Config(format!(
                    "labeler has {} classes, discriminator {}",
                    l.config.classes, disc.config.classes
                )));
            }
        }
        let opt_g = optimizer_for(&codec.store, &freeze_plan(Stage::Finetune).codec_prefixes(), &plan_g);
        let opt_d = AdamW::new(disc.store.params_with_prefix(&[""]), plan_d.adamw());
        Ok(Self {
            codec,
            labeler,
            disc,
            plan_g,
            plan_d,
            lambda_d,
            lambda_mse,
            seed,
            step: 0,
            opt_g,
            opt_d,
            extractor,
        })
    }

    pub fn step(&mut self, batch: &Tensor) -> Result<Stage2Metrics> {
        let lr_g = lr_at_step(self.step + 1, &self.plan_g)?;
        let lr_d = lr_at_step(self.step + 1, &self.plan_d)?;
        let mut rng = rng_for(self.seed ^ 0x6e6f_6973, self.step);

        // Frozen front end: rounded latent, detached so no gradient reaches it.
        let y = self.codec.analyze(batch)?.detach();
        let ep = self.codec.entropy_params(&y, QuantMode::Round, &mut rng)?;
        let y_hat = codec::quantize(&y, &ep.means.detach(), QuantMode::Round, &mut rng)?;
        let (b, _, h, w) = batch.dims4()?;
        let bits = (self.codec.likelihood_bits(&y_hat, &ep.means, &ep.scales)?.sum_all()? + ep.hyper_bits.sum_all()?)?;
        let bpp = scalar(&bits)? / (b * h * w) as f64;
        let x_hat = self.codec.synthesize_train(&y_hat)?;

        let labels = match (&self.labeler, self.disc.config.kind) {
            (Some(l), DiscriminatorKind::IllmUnet) => Some(l.label_maps(batch)?),
            _ => None,
        };
        let cond = (self.disc.config.conditioning_channels > 0).then_some(&y_hat);

        // Discriminator step.
        self.disc.power_iterate()?;
        let real = self.disc.forward(batch, cond)?;
        let fake = self.disc.forward(&x_hat.detach(), cond)?;
        let (loss_d, real_accuracy) = match &labels {
            Some(l) => (losses::illm_disc_loss(&real, &fake, l)?, label_accuracy(&real, l)?),
            None => {
                let (ld, _) = losses::binary_gan_losses(&real, &fake)?;
                let acc = scalar(&real.ge(0.0)?.to_dtype(DType::F32)?.mean_all()?)?;
                (ld, acc)
            }
        };
        let grads = loss_d.backward()?;
        self.opt_d.step(&grads, lr_d)?;

        // Generator step on the decoder only.
        let fake = self.disc.forward(&x_hat, cond)?;
        let loss_g = match &labels {
            Some(l) => losses::illm_gen_loss(&fake, l)?,
            None => losses::binary_gan_losses(&fake.detach(), &fake)?.1,
        };
        let dist = losses::distortion(&x_hat, batch, self.lambda_mse, Some(self.extractor.as_ref()))?;
        let w = LossWeights {
            rate: 0.0,
            distortion: 1.0,
            adversarial: self.lambda_d,
            mse: self.lambda_mse,
        };
        let total = losses::total_objective(&zero()?, &dist, &loss_g, &w)?;
        let grads = total.backward()?;
        self.opt_g.step(&grads, lr_g)?;
        self.step += 1;
        Ok(Stage2Metrics {
            step: self.step,
            lr_g,
            lr_d,
            loss_d: scalar(&loss_d)?,
            loss_g: scalar(&loss_g)?,
            distortion: scalar(&dist)?,
            bpp,
            real_accuracy,
        })
    }

    fn state(&self) -> TrainingState {
        TrainingState {
            stage: Stage::Finetune,
            step: self.step,
            seed: self.seed,
            plan: self.plan_g.clone(),
            rate_schedule: None,
            rate_controller: None,
            lambda_d: Some(self.lambda_d),
            lambda_mse: self.lambda_mse,
        }
    }

    pub fn checkpoint(&self) -> Result<Checkpoint> {
        let mut c = Checkpoint::new();
        self.codec.write_checkpoint(&mut c)?;
        self.disc.write_checkpoint(&mut c)?;
        if let Some(l) = &self.labeler {
            l.write_checkpoint(&mut c)?;
        }
        c.set_section(STATE_SECTION, &self.state())?;
        c.set_section("discriminator_plan", &self.plan_d)?;
        put_optimizer(&mut c, "optim_decoder", &self.opt_g)?;
        put_optimizer(&mut c, "optim_discriminator", &self.opt_d)?;
        Ok(c)
    }

    pub fn resume(ckpt: &Checkpoint, extractor: Box<dyn PerceptualExtractor>) -> Result<Self> {
        let st: TrainingState = ckpt.section(STATE_SECTION)?;
        if st.stage != Stage::Finetune {
            return Err(CoreError::Checkpoint(format!("checkpoint is from stage {:?}, not finetune", st.stage)));
        }
        let codec = HyperpriorCodec::from_checkpoint(ckpt)?;
        let disc = Discriminator::from_checkpoint(ckpt)?;
        let labeler = if ckpt.has_section("labeler_config") { Some(VqLabeler::from_checkpoint(ckpt)?) } else { None };
        let lambda_d = st.lambda_d.ok_or_else(|| CoreError::Checkpoint("missing lambda_d".into()))?;
        let mut t = Self::new(codec, labeler, disc, st.plan, ckpt.section("discriminator_plan")?, lambda_d, st.lambda_mse, extractor, st.seed)?;
        t.step = st.step;
        load_optimizer(ckpt, "optim_decoder", &mut t.opt_g)?;
        load_optimizer(ckpt, "optim_discriminator", &mut t.opt_d)?;
        Ok(t)
    }
}

/// Fraction of locations whose arg-max channel equals the label.
pub fn label_accuracy(logits: &Tensor, labels: &[crate::labeler::LabelMap]) -> Result<f64> {
    let pred: Vec<u32> = logits.argmax(1)?.flatten_all()?.to_vec1()?;
    let truth: Vec<u32> = labels.iter().flat_map(|l| l.indices().iter().copied()).collect();
    if pred.len() != truth.len() {
        return Err(crate::error::shape_err!("{} predictions for {} labels", pred.len(), truth.len()));
    }
    let hits = pred.iter().zip(&truth).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / truth.len().max(1) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelerMetrics {
    pub step: u64,
    pub lr: f64,
    pub loss: f64,
    pub reconstruction: f64,
    pub embedding: f64,
    pub commitment: f64,
}

/// VQ-VAE pretraining of the labeling function.
pub struct LabelerTrainer {
    pub labeler: VqLabeler,
    pub plan: StagePlan,
    pub seed: u64,
    pub step: u64,
    opt: AdamW,
    extractor: Box<dyn PerceptualExtractor>,
}

impl LabelerTrainer {
    pub fn new(labeler: VqLabeler, plan: StagePlan, extractor: Box<dyn PerceptualExtractor>, seed: u64) -> Result<Self> {
        plan.validate()?;
        let opt = AdamW::new(labeler.store.params_with_prefix(&[""]), plan.adamw());
        Ok(Self {
            labeler,
            plan,
            seed,
            step: 0,
            opt,
            extractor,
        })
    }

    pub fn step(&mut self, batch: &Tensor) -> Result<LabelerMetrics> {
        let lr = lr_at_step(self.step + 1, &self.plan)?;
        let l = self.labeler.vq_loss(batch, Some(self.extractor.as_ref()))?;
        let grads = l.total.backward()?;
        self.opt.step(&grads, lr)?;
        self.step += 1;
        Ok(LabelerMetrics {
            step: self.step,
            lr,
            loss: scalar(&l.total)?,
            reconstruction: scalar(&l.reconstruction)?,
            embedding: scalar(&l.embedding)?,
            commitment: scalar(&l.commitment)?,
        })
    }

    pub fn checkpoint(&self) -> Result<Checkpoint> {
        let mut c = Checkpoint::new();
        self.labeler.write_checkpoint(&mut c)?;
        c.set_section(
            STATE_SECTION,
            &TrainingState {
                stage: Stage::Labeler,
                step: self.step,
                seed: self.seed,
                plan: self.plan.clone(),
                rate_schedule: None,
                rate_controller: None,
                lambda_d: None,
                lambda_mse: self.labeler.config.lambda_mse,
            },
        )?;
        put_optimizer(&mut c, "optim_labeler", &self.opt)?;
        Ok(c)
    }

    pub fn resume(ckpt: &Checkpoint, extractor: Box<dyn PerceptualExtractor>) -> Result<Self> {
        let st: TrainingState = ckpt.section(STATE_SECTION)?;
        if st.stage != Stage::Labeler {
            return Err(CoreError::Checkpoint(format!("checkpoint is from stage {:?}, not labeler", st.stage)));
        }
        let mut t = Self::new(VqLabeler::from_checkpoint(ckpt)?, st.plan, extractor, st.seed)?;
        t.step = st.step;
        load_optimizer(ckpt, "optim_labeler", &mut t.opt)?;
        Ok(t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lr_schedule_points() {
        let p = StagePlan::pretrain(100_000);
        assert_eq!(lr_at_step(10_000, &p).unwrap(), 3e-4);
        assert_eq!(lr_at_step(0, &p).unwrap(), 0.0);
        assert!(lr_at_step(100_000, &p).unwrap().abs() < 1e-20);
        assert!(lr_at_step(100_001, &p).is_err());
        assert!((lr_at_step(10_001, &p).unwrap() - 3e-4).abs() < 1e-12);
    }

    #[test]
    fn rate_lambda_rules() {
        let s = RateTargetSchedule::preset("0.14").unwrap();
        assert_eq!(rate_lambda(100_000, 0.2, &s), (2.0, 0.14));
        assert_eq!(rate_lambda(100_000, 0.1, &s).0, 0.0625);
        let (l, t) = rate_lambda(10_000, 0.15, &s);
        assert_eq!(l, 0.0625);
        assert_eq!(t, 0.14 * 1.429);
        assert!((t - 0.2001).abs() < 1e-4);
        assert_eq!(rate_lambda(49_999, 0.3, &s).0, 1.0);
        assert_eq!(rate_lambda(50_000, 0.3, &s).0, 2.0);
        assert!(RateTargetSchedule::preset("0.5").is_err());
    }

    #[test]
    fn freeze_masks() {
        let f = freeze_plan(Stage::Finetune);
        assert!(f.is_frozen(ParamGroup::Encoder) && f.is_frozen(ParamGroup::HyperPrior));
        assert_eq!(f.codec_prefixes(), vec![codec::DECODER]);
        assert!(freeze_plan(Stage::Pretrain).trainable.contains(&ParamGroup::Encoder));
        assert!(freeze_plan(Stage::Labeler).codec_prefixes().is_empty());
    }

    #[test]
    fn ema_controller() {
        let mut c = RateController::default();
        assert_eq!(c.update(1.0), 1.0);
        assert!((c.update(0.0) - 0.9).abs() < 1e-12);
    }
}

//! Subcommands of the `illm` binary. Each one loads its inputs, calls into
//! `illm-core`, and writes its outputs.

pub mod plot;

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use illm_core::checkpoint::Checkpoint;
use illm_core::codec::HyperpriorCodec;
use illm_core::config::RunConfig;
use illm_core::eval::{evaluate_codec, EvalOptions, MetricsReport};
use illm_core::image::Image;
use illm_core::runner::run_training;
use illm_core::training::Stage;
use illm_entropy::{backend_from_env, parse_container, CoderBackend};

#[derive(Debug, Parser)]
#[command(name = "illm", version, about = "Learned image codec with ILLM adversarial fine-tuning")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StageArg {
    #[value(name = "1")]
    One,
    #[value(name = "2")]
    Two,
    Labeler,
}

impl From<StageArg> for Stage {
    fn from(s: StageArg) -> Self {
        match s {
            StageArg::One => Stage::Pretrain,
            StageArg::Two => Stage::Finetune,
            StageArg::Labeler => Stage::Labeler,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one stage from a TOML config.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `train.stage` from the config.
        #[arg(long, value_enum)]
        stage: Option<StageArg>,
    },
    /// Encode an image into an .illm container.
    Compress {
        #[arg(short, long)]
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
    },
    /// Decode an .illm container to PNG/PPM.
    Decompress {
        #[arg(short, long)]
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
    },
    /// Evaluate a checkpoint on a directory of images.
    Eval {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        report: PathBuf,
        /// Config whose `[eval]` table sets extractor, crop policy and KID options.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Rate-distortion curves from one or more eval reports.
    Plot {
        #[arg(long, num_args = 1.., required = true)]
        reports: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_codec(path: &Path) -> Result<HyperpriorCodec> {
    if !path.exists() {
        bail!("checkpoint {} not found", path.display());
    }
    let ckpt = Checkpoint::load(path).with_context(|| format!("reading checkpoint {}", path.display()))?;
    HyperpriorCodec::from_checkpoint(&ckpt).with_context(|| format!("{} holds no codec", path.display()))
}

fn backend() -> Result<std::sync::Arc<dyn CoderBackend>> {
    backend_from_env().map_err(anyhow::Error::msg)
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { config, stage } => {
            let mut cfg = RunConfig::load(&config)?;
            if let Some(s) = stage {
                cfg.train.stage = s.into();
            }
            let summary = run_training(&cfg)?;
            println!("{}", serde_json::to_string(&summary)?);
        }
        Command::Compress { input, output, ckpt } => {
            let codec = load_codec(&ckpt)?;
            let img = Image::load(&input).with_context(|| format!("reading {}", input.display()))?;
            let c = codec.compress_with(&img, backend()?.as_ref())?;
            std::fs::write(&output, c.to_bytes()).with_context(|| format!("writing {}", output.display()))?;
            println!("{} bytes, {:.4} bpp", c.serialized_len(), c.bpp());
        }
        Command::Decompress { input, output, ckpt } => {
            let codec = load_codec(&ckpt)?;
            let bytes = std::fs::read(&input).with_context(|| format!("reading {}", input.display()))?;
            let c = parse_container(&bytes).with_context(|| format!("parsing {}", input.display()))?;
            let img = codec.decompress_with(&c, backend()?.as_ref())?;
            img.save(&output).with_context(|| format!("writing {}", output.display()))?;
        }
        Command::Eval { dataset, ckpt, report, config } => {
            let codec = load_codec(&ckpt)?;
            let opts = match config {
                Some(p) => RunConfig::load(&p)?.eval,
                None => EvalOptions::default(),
            };
            let r = evaluate_codec(&codec, &dataset, &opts)?;
            for s in &r.skipped {
                log::warn!("skipped {}: {}", s.path, s.reason);
            }
            r.save(&report).with_context(|| format!("writing {}", report.display()))?;
            println!("{}", serde_json::to_string(&r.aggregate)?);
        }
        Command::Plot { reports, out } => {
            let loaded = reports
                .iter()
                .map(|p| MetricsReport::load(p).with_context(|| format!("reading report {}", p.display())))
                .collect::<Result<Vec<_>>>()?;
            let fig = plot::plot_rd(&loaded)?;
            for w in &fig.warnings {
                eprintln!("warning: {w}");
            }
            std::fs::write(&out, &fig.svg).with_context(|| format!("writing {}", out.display()))?;
        }
    }
    Ok(())
}

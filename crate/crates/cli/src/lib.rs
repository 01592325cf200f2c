//! File formats, checkpoints and the `mabert` command line.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod container;
pub mod csvio;
pub mod fsutil;
pub mod report;

use std::ffi::OsString;
use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "mabert", version, about = "Multi-agent trajectory and ETA models for terminal airspace")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// TOML run configuration.
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides `seed` in the configuration.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides `out` in the configuration.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Do not echo log records to stderr.
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic arrival traffic as track CSV files.
    Synth(Common),
    /// Reconstruct, resample and cut tracks, then assemble scenes.
    Preprocess(Common),
    /// Masked-scene pre-training.
    Pretrain(Common),
    /// Fine-tune a checkpoint (or train from scratch) on one task.
    Finetune(Common),
    /// Score checkpoints on held-out scenes.
    Evaluate(Common),
    /// Fine-tune on fractions of the training scenes.
    Fraction(Common),
    /// Prequential periodic updates.
    Incremental(Common),
    /// Describe a checkpoint or scene file.
    Inspect {
        path: PathBuf,
    },
}

fn load(common: &Common) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(&common.config)?;
    if common.seed.is_some() {
        cfg.seed = common.seed;
    }
    if common.out.is_some() {
        cfg.out.clone_from(&common.out);
    }
    Ok(cfg)
}

pub fn run<I, T>(args: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args)?;
    match &cli.command {
        Command::Synth(c) => commands::synth(&load(c)?),
        Command::Preprocess(c) => commands::preprocess(&load(c)?),
        Command::Pretrain(c) => commands::pretrain_cmd(&load(c)?, !c.quiet),
        Command::Finetune(c) => commands::finetune_cmd(&load(c)?, !c.quiet),
        Command::Evaluate(c) => commands::evaluate_cmd(&load(c)?),
        Command::Fraction(c) => commands::fraction_cmd(&load(c)?, !c.quiet),
        Command::Incremental(c) => commands::incremental_cmd(&load(c)?, !c.quiet),
        Command::Inspect { path } => {
            print!("{}", commands::inspect(path)?);
            Ok(())
        }
    }
}

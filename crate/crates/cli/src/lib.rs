//! Pipeline around `survcam-core`: synthetic cohorts, risk-head training,
//! prediction, risk maps, region completion, regional reports and
//! evaluation, all driven by one [`RunConfig`].

pub mod commands;
pub mod config;
pub mod formats;

use std::path::PathBuf;

use anyhow::Result;
use clap::{Parser, Subcommand};

pub use commands::Outcome;
pub use config::{Overrides, RunConfig};

#[derive(Debug, Parser)]
#[command(
    name = "survcam",
    version,
    about = "Survival risk maps and regional risk reports"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Time-dependent AUC horizon in days.
    #[arg(long, global = true)]
    pub horizon: Option<f64>,
    #[arg(long, global = true)]
    pub top_k: Option<usize>,
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    pub data_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Generate a synthetic cohort into the data directory.
    Synth,
    /// Fit the risk head (and the region completer when layouts exist).
    Train,
    /// Global risk per subject.
    Predict,
    /// Risk activation maps as PGM heatmaps plus raw values.
    Cam,
    /// Fill undetected regions.
    Complete,
    /// Ranked regional risk reports.
    Report,
    /// C-index, time-dependent AUC, Kaplan-Meier curves and log-rank test.
    Evaluate,
}

impl Cli {
    pub fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            horizon: self.horizon,
            top_k: self.top_k,
            out_dir: self.out_dir.clone(),
            data_dir: self.data_dir.clone(),
        }
    }
}

pub fn execute(command: Command, cfg: &RunConfig) -> Result<Outcome> {
    match command {
        Command::Synth => commands::cmd_synth(cfg),
        Command::Train => commands::cmd_train(cfg),
        Command::Predict => commands::cmd_predict(cfg),
        Command::Cam => commands::cmd_cam(cfg),
        Command::Complete => commands::cmd_complete(cfg),
        Command::Report => commands::cmd_report(cfg),
        Command::Evaluate => commands::cmd_evaluate(cfg),
    }
}

pub fn run(cli: &Cli) -> Result<Outcome> {
    let cfg = RunConfig::resolve(cli.config.as_deref(), &cli.overrides())?;
    execute(cli.command, &cfg)
}

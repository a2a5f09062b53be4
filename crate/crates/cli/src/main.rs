//! `idflow` — reproducible driver for the preference-alignment laboratory.
//!
//! Subcommands cover the full pipeline: pretrain the flow policy, synthesize
//! preference datasets, train/filter/evaluate reward models, align the
//! policy with group-relative optimization, run the ablation grid, and emit
//! a consolidated report. Exit codes: 0 success, 2 config error,
//! 3 precondition error, 4 numerical failure.

mod checkpoint;
mod config;
mod pipeline;
mod report;

use std::path::PathBuf;
use std::time::Instant;

use clap::{Parser, Subcommand};
use idflow_core::reward::ScheduleKind;
use thiserror::Error;

use crate::pipeline::{DataSelector, RewardSelector};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("precondition error: {0}")]
    Precondition(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("io error: {0}")]
    Io(String),
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Precondition(_) => 3,
            CliError::Numerical(_) => 4,
            CliError::Io(_) => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
enum ScheduleArg {
    Random,
    Staged,
    Smooth,
}

impl From<ScheduleArg> for ScheduleKind {
    fn from(arg: ScheduleArg) -> Self {
        match arg {
            ScheduleArg::Random => ScheduleKind::Random,
            ScheduleArg::Staged => ScheduleKind::Staged,
            ScheduleArg::Smooth => ScheduleKind::Smooth,
        }
    }
}

#[derive(Parser)]
#[command(name = "idflow", version, about = "Preference-aligned flow-model laboratory")]
struct Cli {
    /// JSON run configuration; defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Pretrain the flow policy on ground-truth renders.
    Pretrain,
    /// Synthesize the human-like, auto-like, and benchmark pair datasets.
    GenPrefs,
    /// Train a reward model on the selected data sources and schedule.
    TrainRm {
        #[arg(long, value_enum)]
        data: DataSelector,
        #[arg(long, value_enum)]
        schedule: Option<ScheduleArg>,
    },
    /// Filter the auto-labeled set with the human-trained teacher.
    Filter,
    /// Align the pretrained policy with group-relative optimization.
    Grpo {
        #[arg(long, value_enum, default_value = "oracle")]
        reward: RewardSelector,
        /// Reward checkpoint for --reward learned (defaults to the
        /// human-filtered smooth model).
        #[arg(long)]
        reward_checkpoint: Option<PathBuf>,
    },
    /// Evaluate a flow checkpoint on the held-out conditions.
    Eval {
        /// Flow checkpoint manifest (defaults to the pretrained policy).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Run the group-count x initial-noise ablation grid.
    Ablate,
    /// Assemble the consolidated report from existing metrics.
    Report,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let config = config::load_config(cli.config.as_deref(), cli.seed, cli.out.as_deref())?;
    let started = Instant::now();
    let result = match cli.command {
        Command::Pretrain => pipeline::cmd_pretrain(&config),
        Command::GenPrefs => pipeline::cmd_gen_prefs(&config),
        Command::TrainRm { data, schedule } => {
            pipeline::cmd_train_rm(&config, data, schedule.map(Into::into))
        }
        Command::Filter => pipeline::cmd_filter(&config),
        Command::Grpo { reward, reward_checkpoint } => {
            pipeline::cmd_grpo(&config, reward, reward_checkpoint.as_deref())
        }
        Command::Eval { checkpoint } => pipeline::cmd_eval(&config, checkpoint.as_deref()),
        Command::Ablate => pipeline::cmd_ablate(&config),
        Command::Report => report::cmd_report(&config),
    };
    if result.is_ok() {
        println!("done in {} ms", started.elapsed().as_millis());
    }
    result
}

fn main() {
    let cli = Cli::parse();
    if let Err(err) = run(cli) {
        eprintln!("error: {err}");
        std::process::exit(err.exit_code());
    }
}

//! `shadekit` command-line driver.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or contract error.

mod config;
mod data;
mod error;
mod eval;
mod plot;
mod report;
mod train;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::error::Result;

#[derive(Parser)]
#[command(name = "shadekit", version, about = "Synthetic shadow detection: data, training, evaluation and reports")]
struct Cli {
    /// Seed for every random choice the command makes.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// JSON config file (or a run manifest); flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Suppress progress messages on standard error.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus.
    Synth(data::SynthArgs),
    /// Record a train/val/test assignment in a dataset manifest.
    Split(data::SplitArgs),
    /// Write an augmented copy of a dataset's train split.
    Augment(data::AugmentArgs),
    /// Train the encoder-decoder mask model.
    TrainSeg(train::TrainSegArgs),
    /// Train the attenuation GAN.
    TrainGan(train::TrainGanArgs),
    /// Train the grid detector.
    TrainDet(train::TrainDetArgs),
    /// Evaluate a model (or the ground-truth oracle) on a dataset split.
    Eval(eval::EvalArgs),
    /// Per-layer operation counts.
    Flops(eval::FlopsArgs),
    /// Render curve and training-history plots.
    Report(report::ReportArgs),
}

/// Flags shared by every command.
#[derive(Clone, Debug)]
pub struct Globals {
    pub seed: Option<u64>,
    pub config: Option<PathBuf>,
    pub quiet: bool,
}

impl Globals {
    pub fn info(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            eprintln!("{}", msg.as_ref());
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    let g = Globals {
        seed: cli.seed,
        config: cli.config,
        quiet: cli.quiet,
    };
    match cli.command {
        Command::Synth(a) => data::synth(&g, a),
        Command::Split(a) => data::split(&g, a),
        Command::Augment(a) => data::augment(&g, a),
        Command::TrainSeg(a) => train::train_seg(&g, a),
        Command::TrainGan(a) => train::train_gan(&g, a),
        Command::TrainDet(a) => train::train_det(&g, a),
        Command::Eval(a) => eval::eval(&g, a),
        Command::Flops(a) => eval::flops(&g, a),
        Command::Report(a) => report::report(&g, a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use stilts_core::Error;

/// Exit status for a bad command line.
const EXIT_USAGE: u8 = 1;
/// Exit status for unreadable data or an invalid manifest.
const EXIT_CONFIG: u8 = 2;
/// Exit status for a run that aborted while training or checking.
const EXIT_RUNTIME: u8 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "stilts-lab",
    version,
    about = "Intermediate-task transfer experiments at desk scale"
)]
pub struct Cli {
    /// Experiment manifest (JSON). The built-in synthetic experiment is used
    /// when omitted.
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,
    /// Random restarts per plan.
    #[arg(long, global = true)]
    pub restarts: Option<usize>,
    /// Target training cap, or `full`.
    #[arg(long, global = true)]
    pub cap: Option<String>,
    /// First restart seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Concurrent runs (further capped by STILTS_LAB_THREADS).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Manifest override such as `encoder.d_model=16`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub set: Vec<String>,
    /// Log progress (-v) or training detail (-vv).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the real/fake detection tasks as TSV.
    GenFake,
    /// Write the synthetic pair tasks as TSV.
    GenSynth,
    /// Build the vocabulary from every training split.
    BuildVocab,
    /// Pretrain the encoder and save a checkpoint.
    Pretrain,
    /// Run one plan once, at `--seed`.
    Run {
        /// Index into the manifest's plans.
        #[arg(long, default_value_t = 0)]
        plan: usize,
    },
    /// Run one plan over all restarts.
    Sweep {
        #[arg(long, default_value_t = 0)]
        plan: usize,
        /// Also save a checkpoint per restart.
        #[arg(long)]
        checkpoints: bool,
    },
    /// Sweep every plan and render the comparison table.
    Grid {
        #[arg(long)]
        checkpoints: bool,
    },
    /// Render tables and plot data from stored results.
    Report {
        /// Results file; defaults to `<out>/results.jsonl`.
        #[arg(long)]
        results: Option<PathBuf>,
    },
    /// Gradient checks and metric oracles.
    Check,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_)
        | Error::Data(_)
        | Error::Row { .. }
        | Error::Io { .. }
        | Error::Json(_)
        | Error::Checkpoint(_)
        | Error::Metric { .. } => EXIT_CONFIG,
        Error::NonFinite(_)
        | Error::Shape { .. }
        | Error::TensorLen { .. }
        | Error::NonScalarLoss(_)
        | Error::OutOfRange { .. } => EXIT_RUNTIME,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match commands::dispatch(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("stilts-lab: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

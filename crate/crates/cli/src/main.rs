//! `netgrad`: run, bound, and sweep distributed projected-subgradient
//! studies from a single TOML configuration.
//!
//! Exit codes: 0 on success, 1 for configuration problems (the message names
//! the failing key path), 2 when a run-time check fails (the message names
//! the violating transition).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use netgrad::engine::EngineError;
use thiserror::Error;

mod commands;
mod config;
mod report;

use config::TraceFormat;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error{}: {message}", fmt_path(path))]
    Config {
        path: Option<String>,
        message: String,
    },
    #[error("{message}")]
    Check { message: String },
    #[error("cannot write {path}: {source}")]
    Write {
        path: String,
        source: std::io::Error,
    },
}

fn fmt_path(path: &Option<String>) -> String {
    match path {
        Some(p) => format!(" at {p}"),
        None => String::new(),
    }
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Check { .. } => 2,
            CliError::Config { .. } | CliError::Write { .. } => 1,
        }
    }
}

/// Run-time check failures (including disconnected communication windows)
/// exit with 2; everything else about a failed run is a configuration
/// problem and exits with 1.
pub fn engine_failure(e: EngineError) -> CliError {
    fn is_check(e: &EngineError) -> bool {
        match e {
            EngineError::CheckViolation(_) | EngineError::NotConnected { .. } => true,
            EngineError::ReplicaFailed { source, .. } => is_check(source),
            _ => false,
        }
    }
    if is_check(&e) {
        CliError::Check {
            message: e.to_string(),
        }
    } else {
        CliError::Config {
            path: None,
            message: e.to_string(),
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "netgrad",
    version,
    about = "Distributed projected-subgradient studies: simulation, guarantees, sweeps"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Execute the configured study and write a trace and a JSON summary.
    Run(RunArgs),
    /// Print the guarantee report for a configuration without running it.
    Bounds(BoundsArgs),
    /// Vary one parameter and print a CSV table, one row per value.
    Sweep(SweepArgs),
    /// Scan the communication schedule and print its mixing certificate.
    CheckTopology(TopologyArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Path to the TOML configuration file.
    #[arg(long)]
    pub config: PathBuf,
    /// Override one configuration key, e.g. --set stepsize.a=0.5 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Replica count; overrides engine.replicas.
    #[arg(long)]
    pub replicas: Option<u64>,
    /// Base seed; overrides engine.seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Where to write results; defaults to output.out_dir, then the
    /// NETGRAD_OUT_DIR environment variable, then the working directory.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Trace file format; the summary is always JSON.
    #[arg(long, value_enum)]
    pub format: Option<TraceFormat>,
}

#[derive(Debug, Args)]
pub struct BoundsArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Accuracy target; adds the stopping-rule block to the report.
    #[arg(long)]
    pub epsilon: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// What to vary: alpha, sigma, m, q, or eta.
    #[arg(long)]
    pub param: String,
    /// Comma-separated values; an empty list prints only the header.
    #[arg(long, value_delimiter = ',', num_args = 0.., default_value = "")]
    pub values: Vec<String>,
    /// Replicas per engine-backed row; overrides engine.replicas.
    #[arg(long)]
    pub replicas: Option<u64>,
    /// Base seed; overrides engine.seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TopologyArgs {
    #[command(flatten)]
    pub common: CommonArgs,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(args) => commands::cmd_run(args),
        Command::Bounds(args) => commands::cmd_bounds(args),
        Command::Sweep(args) => commands::cmd_sweep(args),
        Command::CheckTopology(args) => commands::cmd_check_topology(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}

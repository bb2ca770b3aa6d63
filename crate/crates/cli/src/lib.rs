//! Command-line front end for the offloading age and equilibrium toolkit.
//!
//! A run reads one JSON config, applies command-line overrides, computes
//! everything in memory and only then writes its CSV and JSON files, so a
//! rejected config never leaves partial output behind.

// Negated comparisons below deliberately reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod run;

use std::path::PathBuf;

use clap::Parser;

pub use config::{ExperimentConfig, Mode, Overrides};
pub use run::{execute, Artifacts};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Solver(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) | CliError::Io(_) => 1,
            CliError::Solver(_) => 2,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Validation(_) => "validation",
            CliError::Solver(_) => "solver",
            CliError::Io(_) => "io",
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "mec-aoi",
    version,
    about = "Age of information and offloading equilibria for edge computing"
)]
pub struct Args {
    #[arg(value_enum)]
    pub mode: Mode,
    /// JSON experiment config.
    #[arg(long)]
    pub config: PathBuf,
    /// Override a config value, e.g. `--set types.0.lambda=5` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Output directory (overrides the config's `output`).
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Master seed for simulations.
    #[arg(long)]
    pub seed: Option<u64>,
}

/// Result of a completed run.
#[derive(Debug)]
pub struct Report {
    pub written: Vec<PathBuf>,
    pub summary: Vec<String>,
    pub unconverged: Vec<String>,
}

pub fn run(args: &Args) -> Result<Report, CliError> {
    let text = std::fs::read_to_string(&args.config)
        .map_err(|e| CliError::Validation(format!("cannot read {}: {e}", args.config.display())))?;
    let overrides = Overrides {
        mode: Some(args.mode),
        set: args.set.clone(),
        output: args.output.clone(),
        seed: args.seed,
    };
    let cfg = ExperimentConfig::resolve(&text, &overrides)?;
    let artifacts = execute(&cfg)?;
    let written = artifacts.write_to(&cfg.output)?;
    Ok(Report {
        written,
        summary: artifacts.summary,
        unconverged: artifacts.unconverged,
    })
}

/// One-line machine-readable error record.
pub fn error_line(kind: &str, message: &str) -> String {
    serde_json::json!({ "error": kind, "message": message }).to_string()
}

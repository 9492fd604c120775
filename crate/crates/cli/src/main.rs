//! `cace`: generate traces, replay them under an eviction policy, and compare
//! policies over pattern × seed grids.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cace_core::metrics::OutputFormat;
use cace_core::policy::{P1Mode, Variant};
use cace_core::workload::PatternName;

#[derive(Debug, Parser)]
#[command(
    name = "cace",
    version,
    about = "Multi-model serving simulator with context-aware model eviction"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// TOML file whose keys mirror the flags; flags take precedence.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,

    /// Model catalog document (defaults to the built-in 16-model catalog).
    #[arg(long, global = true, value_name = "PATH")]
    pub catalog: Option<PathBuf>,

    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,

    /// `json` (default) or `csv`.
    #[arg(long, global = true, value_parser = parse_format)]
    pub format: Option<OutputFormat>,

    /// Comma-separated seeds, e.g. `1,2,3`.
    #[arg(long, global = true, value_delimiter = ',', num_args = 1..)]
    pub seeds: Option<Vec<u64>>,
}

#[derive(Debug, Default, Args)]
pub struct PolicyArgs {
    /// Recency term polarity.
    #[arg(long, value_parser = parse_p1_mode)]
    pub p1_mode: Option<P1Mode>,

    /// Weight of the task-criticality term.
    #[arg(long, value_parser = non_negative)]
    pub w1: Option<f64>,

    /// Lookahead window length.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub window: Option<u64>,
}

#[derive(Debug, Default, Args)]
pub struct GridArgs {
    /// Arrival rate in requests per second.
    #[arg(long, value_parser = positive)]
    pub rate: Option<f64>,

    /// Length of one arrival window in seconds.
    #[arg(long, value_parser = non_negative)]
    pub duration: Option<f64>,

    /// Number of consecutive arrival windows per trace.
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
    pub windows: Option<u32>,

    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub accelerators: Option<u64>,

    /// Seconds to unload an evicted model before the next load starts.
    #[arg(long, value_parser = non_negative)]
    pub unload_time: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a Poisson request trace (one file per seed).
    Generate {
        #[arg(long, value_parser = parse_pattern)]
        pattern: Option<PatternName>,

        #[arg(long, value_parser = positive)]
        rate: Option<f64>,

        #[arg(long, value_parser = non_negative)]
        duration: Option<f64>,

        #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
        windows: Option<u32>,

        /// Single seed; `--seeds` writes one trace per seed instead.
        #[arg(long, conflicts_with = "seeds")]
        seed: Option<u64>,

        /// Trace file path (single seed only); defaults to a name under `--out`.
        #[arg(long, value_name = "PATH")]
        output: Option<PathBuf>,
    },
    /// Replay a trace under one policy and write the run report.
    Simulate {
        #[arg(long, value_name = "PATH")]
        trace: PathBuf,

        #[arg(long, value_parser = parse_variant)]
        policy: Option<Variant>,

        #[command(flatten)]
        knobs: PolicyArgs,

        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        accelerators: Option<u64>,

        #[arg(long, value_parser = non_negative)]
        unload_time: Option<f64>,

        /// Report path; defaults to a name under `--out`.
        #[arg(long, value_name = "PATH")]
        output: Option<PathBuf>,
    },
    /// Run the pattern × policy × seed grid and tabulate against a baseline.
    Compare {
        #[arg(long, value_delimiter = ',', num_args = 1.., value_parser = parse_pattern)]
        patterns: Option<Vec<PatternName>>,

        #[arg(long, value_delimiter = ',', num_args = 1.., value_parser = parse_variant)]
        policies: Option<Vec<Variant>>,

        #[arg(long, value_parser = parse_variant)]
        baseline: Option<Variant>,

        #[command(flatten)]
        grid: GridArgs,

        #[command(flatten)]
        knobs: PolicyArgs,
    },
    /// Full score against each single-term ablation on one pattern.
    Ablate {
        #[arg(long, value_parser = parse_pattern)]
        pattern: Option<PatternName>,

        #[command(flatten)]
        grid: GridArgs,

        #[command(flatten)]
        knobs: PolicyArgs,
    },
    /// Print the model catalog as JSON.
    Catalog,
}

fn positive(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() && v > 0.0 => Ok(v),
        Ok(v) => Err(format!("must be a positive number, got {v}")),
        Err(e) => Err(e.to_string()),
    }
}

fn non_negative(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() && v >= 0.0 => Ok(v),
        Ok(v) => Err(format!("must be a non-negative number, got {v}")),
        Err(e) => Err(e.to_string()),
    }
}

fn parse_format(s: &str) -> Result<OutputFormat, String> {
    s.parse().map_err(|e: cace_core::Error| e.to_string())
}

fn parse_p1_mode(s: &str) -> Result<P1Mode, String> {
    s.parse().map_err(|e: cace_core::Error| e.to_string())
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    s.parse().map_err(|e: cace_core::Error| e.to_string())
}

fn parse_pattern(s: &str) -> Result<PatternName, String> {
    s.parse().map_err(|e: cace_core::Error| e.to_string())
}

/// Usage errors exit 2, everything else 1.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Runtime(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Runtime(e.into())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}\n\nFor more information, try '--help'.");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

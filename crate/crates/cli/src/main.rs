//! `hsnn`: command-line front end for the hybrid ANN/SNN engine.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hybrid_snn::hybrid::HybridMode;

#[derive(Debug, Parser)]
#[command(
    name = "hsnn",
    version,
    about = "Hybrid ANN/SNN event-stream inference"
)]
pub struct Cli {
    /// TOML run configuration; every key has a default.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory (overrides `out_dir`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Seed (overrides `seed`).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load an event file, validate it and write it in binary form.
    Ingest {
        #[arg(long)]
        events: Option<PathBuf>,
    },
    /// Run the hybrid network over a span and write the prediction trace.
    Infer {
        #[arg(long)]
        mode: Option<HybridMode>,
        /// `t0..t1` in microseconds; defaults to the stream's time span.
        #[arg(long)]
        span: Option<String>,
        /// Use seeded random weights when no weight file is configured.
        #[arg(long)]
        random_weights: bool,
    },
    /// Count operations and report energy and power.
    Energy {
        /// SNN rates in Hz for the power curve, comma separated.
        #[arg(long, value_delimiter = ',')]
        rates: Vec<f64>,
        /// Spike dump from `infer` to account instead of running the model.
        #[arg(long, conflicts_with = "span")]
        dump: Option<PathBuf>,
        /// `t0..t1` in microseconds for a live run; defaults to the stream's time span.
        #[arg(long)]
        span: Option<String>,
    },
    /// Compare BPTT gradients with central finite differences.
    Gradcheck {
        /// Spatial side of the test nets.
        #[arg(long, default_value_t = 6)]
        size: usize,
        /// Number of consecutive seeds to check.
        #[arg(long, default_value_t = 1)]
        seeds: u64,
        #[arg(long, default_value_t = 1e-3)]
        tolerance: f64,
    },
    /// Score a prediction trace against labels.
    Eval {
        /// One trace, or one per camera view with `--triangulate`.
        #[arg(long, num_args = 1..=2, required = true)]
        pred: Vec<PathBuf>,
        #[arg(long)]
        gt: Option<PathBuf>,
        #[arg(long, num_args = 2)]
        cams: Vec<PathBuf>,
        #[arg(long, requires = "cams")]
        triangulate: bool,
    },
    /// Train the toy hybrid model on the synthetic blob task.
    Traintoy {
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        mode: Option<HybridMode>,
    },
}

fn exit_code(err: &anyhow::Error) -> u8 {
    use hybrid_snn::Error;
    match err.downcast_ref::<Error>() {
        Some(Error::Config(_)) => 2,
        Some(Error::Parse { .. } | Error::Geometry { .. } | Error::Io { .. }) => 3,
        Some(Error::Projection(_) | Error::Triangulation(_)) => 3,
        Some(Error::Contract(_)) => 4,
        None => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

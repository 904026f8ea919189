mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

const VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), " (config schema 1)");

/// Failure classes, mapped onto the process exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags, configuration or input files (exit 2).
    Usage(String),
    /// The computation itself failed (exit 1).
    Compute(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Compute(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Compute(m) => f.write_str(m),
        }
    }
}

#[derive(Parser)]
#[command(name = "swbreak", version = VERSION, about = "Spatial weights and mean-break estimation for panels")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one panel with known weights and break schedule.
    Simulate(SimulateArgs),
    /// Estimate weights and breaks from a panel CSV.
    Estimate(EstimateArgs),
    /// Run the Monte Carlo experiment.
    Mc(McArgs),
    /// Map a panel to normal scores or scores back to the original scale.
    Transform(TransformArgs),
}

#[derive(Args)]
pub struct Common {
    /// JSON configuration with flat dotted keys.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override any configuration key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output directory.
    #[arg(short, long, value_name = "DIR")]
    output: Option<PathBuf>,
}

#[derive(Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_parser = ["queen", "random", "block"])]
    scheme: Option<String>,
    #[arg(long)]
    rho: Option<f64>,
    /// Number of time points.
    #[arg(long = "t-len", visible_alias = "horizon")]
    t_len: Option<usize>,
    /// Seed for the weights draw and the noise.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long = "noise-sd")]
    noise_sd: Option<f64>,
}

#[derive(Args)]
pub struct EstimateArgs {
    #[command(flatten)]
    common: Common,
    /// Panel CSV: time labels in the first column, location labels in the header.
    #[arg(short, long, value_name = "FILE")]
    input: Option<PathBuf>,
    /// Seed from which the fold assignments of both steps are derived.
    #[arg(long)]
    seed: Option<u64>,
    /// Fraction of the sample at the end in which no break may start.
    #[arg(long = "tail-freeze")]
    tail_freeze: Option<f64>,
}

#[derive(Args)]
pub struct McArgs {
    #[command(flatten)]
    common: Common,
    /// Comma-separated cells `scheme:rho:T`.
    #[arg(long, value_delimiter = ',')]
    cells: Vec<String>,
    /// Replications per cell.
    #[arg(long)]
    reps: Option<usize>,
    /// Master seed for every replication stream.
    #[arg(long)]
    seed: Option<u64>,
    /// Keep replications already present in the output directory.
    #[arg(long)]
    resume: bool,
    /// Worker threads; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    jobs: usize,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum Direction {
    ToNormal,
    ToOriginal,
}

#[derive(Args)]
pub struct TransformArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_enum)]
    direction: Option<Direction>,
    #[arg(short, long, value_name = "FILE")]
    input: Option<PathBuf>,
    /// Transform state JSON (read for to-original).
    #[arg(long, value_name = "FILE")]
    state: Option<PathBuf>,
    /// Locations missing more than this fraction of values are dropped.
    #[arg(long = "max-missing")]
    max_missing: Option<f64>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Simulate(a) => commands::simulate(a),
        Command::Estimate(a) => commands::estimate(a),
        Command::Mc(a) => commands::mc(a),
        Command::Transform(a) => commands::transform(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}

//! Command-line front end: configuration, orchestration and artifacts.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use commands::Command;
pub use config::RunConfig;
pub use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "shellopt", version, about = "Pessimistic bilevel thickness optimization of elastic shells")]
pub struct Cli {
    #[command(subcommand)]
    pub command: CliCommand,
}

#[derive(Debug, Clone, clap::Args)]
pub struct CommonArgs {
    /// JSON run configuration.
    #[arg(long)]
    pub config: PathBuf,
    /// Worker threads for per-sample evaluation (default: available parallelism).
    #[arg(long)]
    pub workers: Option<usize>,
    /// Overrides the noise seed of the configuration.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum CliCommand {
    /// Stochastic gradient descent on the thickness field.
    Solve(CommonArgs),
    /// Worst-case force for one thickness field.
    Follower(CommonArgs),
    /// Risk measures of one thickness field under thickness noise.
    Simulate(CommonArgs),
    /// Closed-form two-dimensional example.
    Toy(CommonArgs),
}

impl CliCommand {
    pub fn split(&self) -> (Command, &CommonArgs) {
        match self {
            CliCommand::Solve(a) => (Command::Solve, a),
            CliCommand::Follower(a) => (Command::Follower, a),
            CliCommand::Simulate(a) => (Command::Simulate, a),
            CliCommand::Toy(a) => (Command::Toy, a),
        }
    }
}

/// Loads the configuration, applies the overrides and runs `command` on a
/// pool of `workers` threads.
pub fn execute(command: Command, args: &CommonArgs) -> Result<serde_json::Value, CliError> {
    let mut config = RunConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        config.noise.seed = seed;
    }
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = args.workers {
        if n == 0 {
            return Err(CliError::Config("--workers must be at least 1".into()));
        }
        pool = pool.num_threads(n);
    }
    let pool = pool.build().map_err(|e| CliError::Config(format!("cannot start worker pool: {e}")))?;
    pool.install(|| commands::run(command, &config))
}

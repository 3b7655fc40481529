//! Declarative experiment runner for the `tracefem` library.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod error;
pub mod table;

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use tracefem::Execution;

pub use commands::{Context, Outcome};
pub use config::ExperimentConfig;
pub use error::CliError;

/// Environment variable capping the worker threads.
pub const THREADS_ENV: &str = "TRACEFEM_THREADS";

#[derive(Debug, Parser)]
#[command(name = "tracefem", version, about = "Trace FEM experiments for the heat equation on a circle")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, clap::Args)]
pub struct CommonArgs {
    /// JSON experiment configuration; omitted keys take their defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory, overriding `output_dir`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Seed for randomized property checks, overriding `seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Build step matrices from the displayed matrix formulas instead of the bilinear forms.
    #[arg(long, global = true)]
    pub literal_eq_matrices: bool,
    /// Use the plain mass matrix in the time-derivative term.
    #[arg(long, global = true)]
    pub no_time_stab: bool,
}

#[derive(Clone, Copy, Debug, Subcommand, PartialEq, Eq)]
pub enum Command {
    /// Audit the cut-cell quadrature.
    Quadcheck,
    /// Stabilized projection of the initial data and its errors.
    Project,
    /// Time stepping with per-step norm logs.
    Heat,
    /// Stability constants and their sandwich checks.
    Diagnose,
    /// Condition numbers of the one-step matrices over a range of steps.
    Dtsweep,
    /// Manufactured-solution convergence study over the mesh ladder.
    Converge,
}

impl Cli {
    pub fn load_config(&self) -> Result<ExperimentConfig, CliError> {
        let mut cfg = match &self.common.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(out) = &self.common.out {
            cfg.output_dir = out.clone();
        }
        if let Some(seed) = self.common.seed {
            cfg.seed = seed;
        }
        cfg.literal_eq_matrices |= self.common.literal_eq_matrices;
        if self.common.no_time_stab {
            cfg.stabilized_time_derivative = false;
        }
        Ok(cfg)
    }
}

/// Thread count from the environment; `None` leaves the rayon default.
pub fn threads_from_env() -> Result<Option<usize>, CliError> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(CliError::Config(format!("{THREADS_ENV} must be a positive integer, got '{v}'"))),
        },
        Err(_) => Ok(None),
    }
}

pub fn execute(command: Command, config: ExperimentConfig) -> Result<Outcome, CliError> {
    let threads = threads_from_env()?;
    let exec = if threads == Some(1) { Execution::Sequential } else { Execution::Parallel };
    let ctx = Context { out: config.output_dir.clone(), config, exec };
    let job = || match command {
        Command::Quadcheck => commands::quadcheck(&ctx),
        Command::Project => commands::project(&ctx),
        Command::Heat => commands::heat(&ctx),
        Command::Diagnose => commands::diagnose(&ctx),
        Command::Dtsweep => commands::dtsweep(&ctx),
        Command::Converge => commands::converge(&ctx),
    };
    match threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Config(format!("cannot build a pool of {n} threads: {e}")))?
            .install(job),
        None => job(),
    }
}

//! Command-line front end: configuration, table caching and CSV/JSON output
//! for Fisher sweeps, intensity optimization, Monte Carlo estimation, oracle
//! checks and detector-imperfection sweeps.

// `!(x >= 0.0)` style guards deliberately reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cache;
pub mod commands;
pub mod config;
pub mod error;
pub mod scenario;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use cache::TableCache;
use commands::Context;
use config::{LoadedConfig, Overrides};
pub use error::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "qei",
    version,
    about = "Loss-tolerant stellar interferometry with auxiliary photon sources"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// TOML configuration file; built-in defaults when absent.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// CSV destination; standard output when absent.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    /// JSON diagnostics destination (mle-sim, oracle-check).
    #[arg(long, global = true)]
    pub json: Option<PathBuf>,

    /// Always rebuild outcome tables.
    #[arg(long, global = true)]
    pub no_cache: bool,

    #[arg(long, global = true, default_value = ".qei-cache")]
    pub cache_dir: PathBuf,

    /// Worker threads; all cores when absent.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fisher information and Cramér–Rao bound per baseline and source.
    FisherSweep,
    /// Optimal source intensity per baseline.
    MuOpt,
    /// Maximum-likelihood Monte Carlo against the Cramér–Rao bound.
    MleSim,
    /// Closed-form versus engine cross-check; exits 3 on deviation.
    OracleCheck {
        /// Perturb one engine coefficient to exercise the failure path.
        #[arg(long)]
        inject_fault: bool,
    },
    /// Mean angular error over detector efficiency and dark-count grids.
    DetectorSweep,
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("--threads: {e}")))?;
    }
    let ctx = Context {
        config: LoadedConfig::load(cli.config.as_deref(), &cli.overrides)?,
        cache: if cli.no_cache {
            TableCache::disabled()
        } else {
            TableCache::new(cli.cache_dir)
        },
        out: cli.out,
        json: cli.json,
    };
    match cli.command {
        Command::FisherSweep => commands::fisher_sweep(&ctx),
        Command::MuOpt => commands::mu_opt(&ctx),
        Command::MleSim => commands::mle_sim(&ctx),
        Command::OracleCheck { inject_fault } => commands::oracle_check(&ctx, inject_fault),
        Command::DetectorSweep => commands::detector_sweep(&ctx),
    }
}

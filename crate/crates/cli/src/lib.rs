//! Command-line pipeline: `simulate`, `fit`, `analyze`, `appendix`.

pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;
pub mod output;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use commands::Outcome;
pub use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "popident", version, about = "Population-level practical identifiability of NLME ODE models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the seed of this command's stochastic stage.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads; defaults to the available parallelism.
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw a virtual population and write a synthetic dataset.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Multi-start SAEM fits ranked by AIC.
    Fit {
        #[arg(long)]
        config: PathBuf,
        /// Dataset in ID,TIME,Y,AMT,EVID layout.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        n_starts: Option<usize>,
        #[arg(long)]
        top_k: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Pairwise KS and overlap comparison of the best fits.
    Analyze {
        /// Directory written by `fit`.
        #[arg(long)]
        fits: PathBuf,
        /// Optional config supplying `analysis` defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        top_k: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Monte Carlo likelihood landscapes for exponential growth.
    Appendix {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        common: Common,
    },
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Simulate { common, .. }
            | Command::Fit { common, .. }
            | Command::Analyze { common, .. }
            | Command::Appendix { common, .. } => common,
        }
    }
}

/// Runs one command on a pool of `--workers` threads.
pub fn run(cli: &Cli) -> Result<Outcome, CliError> {
    let common = cli.command.common();
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = common.workers {
        if n == 0 {
            return Err(CliError::config("--workers must be >= 1"));
        }
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| CliError::config(format!("thread pool: {e}")))?;
    pool.install(|| match &cli.command {
        Command::Simulate { config, common } => commands::simulate(config, &common.out, common.seed),
        Command::Fit { config, data, n_starts, top_k, common } => {
            commands::fit(config, data, &common.out, common.seed, *n_starts, *top_k)
        }
        Command::Analyze { fits, config, alpha, top_k, common } => {
            commands::analyze(fits, &common.out, config.as_deref(), *alpha, *top_k)
        }
        Command::Appendix { config, common } => commands::appendix(config, &common.out, common.seed),
    })
}

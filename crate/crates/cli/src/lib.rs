//! Batch front end for netsmooth: estimate, simulate, route and
//! validate-spectral. Exit codes are 0 on success, 2 for input or validation
//! problems and 3 for numerical failures.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub mod commands;
pub mod config;
pub mod io;
pub mod manifest;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) | CliError::Io(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl From<netsmooth::Error> for CliError {
    fn from(e: netsmooth::Error) -> Self {
        if e.is_numerical() {
            CliError::Numerical(e.to_string())
        } else {
            CliError::Input(e.to_string())
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "netsmooth", version, about = "Travel-time smoothing and route choice on road networks")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Master seed; overrides the config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads. Results do not depend on this.
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,
    #[arg(long, global = true, default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Smooth observed sub-edge means and write the posterior.
    Estimate(EstimateArgs),
    /// Monte Carlo error study from a JSON config.
    Simulate(SimulateArgs),
    /// Repeated route selection from a JSON config.
    Route(RouteArgs),
    /// Eigenvalue and series checks for a refined graph.
    ValidateSpectral(SpectralArgs),
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    /// Graph JSON.
    pub graph: PathBuf,
    /// Observations CSV.
    pub observations: PathBuf,
    /// Optional JSON with resolution, lambda_grid, smoothing, estimator.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Sub-edge split: one integer or a JSON list per edge. Must agree with the observations.
    #[arg(long)]
    pub resolution: Option<String>,
    /// min,max,count
    #[arg(long)]
    pub lambda_grid: Option<String>,
    #[arg(long)]
    pub no_smoothing: bool,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    pub config: PathBuf,
    #[arg(long)]
    pub reps: Option<usize>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum BasisArg {
    TimePerKm,
    Velocity,
}

impl From<BasisArg> for netsmooth::Basis {
    fn from(b: BasisArg) -> Self {
        match b {
            BasisArg::TimePerKm => netsmooth::Basis::TimePerKm,
            BasisArg::Velocity => netsmooth::Basis::Velocity,
        }
    }
}

#[derive(Debug, Args)]
pub struct RouteArgs {
    pub config: PathBuf,
    /// expected_time, posterior_quantile, estimator_quantile,
    /// sum_sq_consecutive_diff or mean_sq_consecutive_diff
    #[arg(long)]
    pub objective: Option<String>,
    #[arg(long)]
    pub quantile: Option<f64>,
    #[arg(long, value_enum)]
    pub basis: Option<BasisArg>,
    #[arg(long)]
    pub max_hops: Option<usize>,
    #[arg(long)]
    pub reps: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SpectralArgs {
    pub graph: PathBuf,
    /// One integer or a JSON list per edge.
    #[arg(long)]
    pub resolution: String,
    /// Series check s,t,r,lambda_eff; repeatable.
    #[arg(long)]
    pub series: Vec<String>,
}

/// Runs one command on a pool of `--threads` workers.
pub fn run(cli: Cli) -> Result<(), CliError> {
    if cli.common.threads == 0 {
        return Err(CliError::Input("--threads must be at least 1".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.common.threads)
        .build()
        .map_err(|e| CliError::Io(e.to_string()))?;
    pool.install(|| match &cli.command {
        Command::Estimate(a) => commands::estimate(&cli.common, a),
        Command::Simulate(a) => commands::simulate(&cli.common, a),
        Command::Route(a) => commands::route(&cli.common, a),
        Command::ValidateSpectral(a) => commands::validate_spectral(&cli.common, a),
    })
}

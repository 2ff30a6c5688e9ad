//! Command-line front end for the adaptive SDE experiments.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use adaptive_sde::controllers::{ControllerSpec, CONTROLLER_NAMES};
use adaptive_sde::models::{model_parameters, MODEL_NAMES};
use adaptive_sde::{Method, SdeError};
use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Runtime(#[from] SdeError),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(e) if is_usage(e) => 2,
            CliError::Runtime(_) | CliError::Io(_) => 3,
        }
    }
}

/// Bad parameters reported by the library are caller mistakes.
fn is_usage(e: &SdeError) -> bool {
    matches!(e, SdeError::InvalidParameter(_) | SdeError::FormulationMismatch { .. })
}

#[derive(Debug, Parser)]
#[command(name = "adaptive-sde", version, about = "Adaptive step size SDE solvers: convergence and bias experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct Common {
    /// Master seed, decimal or 0x-prefixed hex [env: ADAPTIVE_SDE_SEED] [default: 0]
    #[arg(long)]
    seed: Option<String>,
    /// Monte Carlo sample count
    #[arg(long)]
    samples: Option<usize>,
    /// CSV output path (stdout when absent)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Exit with status 1 when the result misses its target
    #[arg(long)]
    check: bool,
    /// Worker threads (results do not depend on this)
    #[arg(long)]
    threads: Option<usize>,
    /// 100000 samples and a 2^-14 T reference grid
    #[arg(long)]
    full_scale: bool,
    /// Flat key = value file; command-line flags take precedence
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Strong error of a method over a sweep of step sizes or tolerances
    Convergence(ConvergenceArgs),
    /// Bias of a skipping adaptive controller against a no-skip control run
    Counterexample(CounterexampleArgs),
    /// Mean absolute determinant of a Gaussian matrix
    Moments(MomentsArgs),
    /// Local mean squared error coefficients of Heun and SPaRK steps
    LocalError(LocalErrorArgs),
    /// Hölder-distance decay of piecewise-linear Brownian approximations
    Holder(HolderArgs),
    /// Moment checks of the Brownian tree's midpoint split
    Bridge(BridgeArgs),
    /// Mean previsible SABR step against its lower bound
    PrevisibleBound(PrevisibleBoundArgs),
    /// Regression of the iterated integral on increments and areas
    Regression(RegressionArgs),
}

#[derive(Debug, Args)]
pub struct ConvergenceArgs {
    #[command(flatten)]
    common: Common,
    /// Model name [default: sabr]
    #[arg(long)]
    model: Option<String>,
    /// Model parameters, e.g. mu=0.05,sigma=0.5
    #[arg(long)]
    params: Option<String>,
    /// Stepper name [default: heun]
    #[arg(long)]
    method: Option<String>,
    /// Controller kind with optional parameters, e.g. pi or pi:kp=0 [default: constant]
    #[arg(long)]
    controller: Option<String>,
    /// Swept values (h for constant steps, C otherwise), comma-separated
    #[arg(long)]
    grid: Option<String>,
    /// Reference solution: fine or exact [default: fine]
    #[arg(long)]
    reference: Option<String>,
    /// Expected rate for --check [default: 0.5]
    #[arg(long)]
    expect_slope: Option<f64>,
    /// Allowed deviation of the rate for --check [default: 0.12]
    #[arg(long)]
    slope_tol: Option<f64>,
}

#[derive(Debug, Args)]
pub struct CounterexampleArgs {
    #[command(flatten)]
    common: Common,
    /// Horizon T [default: 1]
    #[arg(long)]
    horizon: Option<f64>,
    /// Coarse steps, a power of two [default: 8]
    #[arg(long)]
    steps: Option<u64>,
}

#[derive(Debug, Args)]
pub struct MomentsArgs {
    #[command(flatten)]
    common: Common,
    /// Matrix size [default: 2]
    #[arg(long)]
    dim: Option<u32>,
}

#[derive(Debug, Args)]
pub struct LocalErrorArgs {
    #[command(flatten)]
    common: Common,
    /// Step size, e.g. 1/256 [default: 1/256]
    #[arg(long)]
    h: Option<String>,
    /// Depth of the trapezoid reference below the step [default: 7]
    #[arg(long)]
    fine_depth: Option<u32>,
    /// Allowed deviation of each ratio for --check [default: 0.05]
    #[arg(long)]
    tol: Option<f64>,
}

#[derive(Debug, Args)]
pub struct HolderArgs {
    #[command(flatten)]
    common: Common,
    /// Hölder exponent in (1/3, 1/2) [default: 0.4]
    #[arg(long)]
    alpha: Option<f64>,
    /// Interpolation depths, a..b or a list [default: 2..8]
    #[arg(long)]
    depths: Option<String>,
    /// Depth of the reference path [default: 12, 14 at full scale]
    #[arg(long)]
    fine_depth: Option<u32>,
}

#[derive(Debug, Args)]
pub struct BridgeArgs {
    #[command(flatten)]
    common: Common,
    /// Random nodes for the chaining round trip [default: 10000]
    #[arg(long)]
    chain_nodes: Option<usize>,
}

#[derive(Debug, Args)]
pub struct PrevisibleBoundArgs {
    #[command(flatten)]
    common: Common,
    /// Tolerance C [default: 0.01]
    #[arg(long)]
    tolerance: Option<String>,
    /// Times, comma-separated [default: 0.5,1,2]
    #[arg(long)]
    times: Option<String>,
}

#[derive(Debug, Args)]
pub struct RegressionArgs {
    #[command(flatten)]
    common: Common,
    /// Depth of the trapezoid iterated integral [default: 5]
    #[arg(long)]
    fine_depth: Option<u32>,
    /// Allowed coefficient deviation for --check [default: 0.02]
    #[arg(long)]
    tol: Option<f64>,
}

/// Names accepted by the registries, for the help text.
fn registry_help() -> String {
    let models: Vec<String> = MODEL_NAMES
        .iter()
        .map(|m| {
            let p = model_parameters(m);
            if p.is_empty() {
                m.to_string()
            } else {
                format!("{m} ({})", p.join(", "))
            }
        })
        .collect();
    let methods: Vec<&str> = Method::ALL.iter().map(|m| m.name()).collect();
    let controllers: Vec<String> =
        CONTROLLER_NAMES.iter().map(|c| format!("{c} ({})", ControllerSpec::keys(c).join(", "))).collect();
    format!(
        "Models: {}\nMethods: {}\nControllers: {}\n\nExit status: 0 ok, 1 --check failed, 2 usage error, 3 runtime error.",
        models.join("; "),
        methods.join(", "),
        controllers.join("; ")
    )
}

fn main() -> ExitCode {
    let help = registry_help();
    let mut cmd = Cli::command().after_help(help.clone());
    cmd = cmd.mut_subcommand("convergence", |c| c.after_help(help.clone()));
    let matches = cmd.get_matches();
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    match commands::run(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

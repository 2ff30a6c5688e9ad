//! Monte Carlo experiments.

pub mod experiments;
pub mod holder;
pub mod report;
pub mod stats;
pub mod strong;

pub use experiments::{
    bridge_moment_tests, counterexample_experiment, gaussian_determinant_mc, levy_regression, local_mse_ratio,
    previsible_bound_check,
};
pub use holder::{holder_decay, HolderReport};
pub use stats::{fit_rate, Fit, MeanEstimate, MomentCheck};
pub use strong::{
    default_values, strong_error, sweep, Reference, StrongErrorConfig, StrongErrorPoint, StrongErrorReport, Sweep,
};

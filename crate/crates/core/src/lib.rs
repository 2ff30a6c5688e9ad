//! Adaptive step-size simulation of Ito and Stratonovich SDEs.
//!
//! The crate is organised bottom-up:
//!
//! - [`brownian_tree`]: seed-addressed increments and space-time Levy areas
//!   over dyadic intervals.
//! - [`solvers`]: embedded one-step integrators.
//! - [`controllers`]: step-size policies with no-skip audit trails.
//! - [`models`]: built-in test systems.
//! - [`driver`]: integration loop tying the above together.
//! - [`harness`]: Monte Carlo experiments (strong errors, bias, moments).

pub mod brownian_tree;
pub mod controllers;
pub mod driver;
pub mod dyadic;
pub mod error;
pub mod harness;
pub mod models;
pub mod rng;
pub mod solvers;
pub mod system;

pub use brownian_tree::{chain_samples, BrownianSample, BrownianTree, Vector};
pub use dyadic::{canonical_cover, DyadicInterval, DyadicTime};
pub use error::{Result, SdeError};
pub use solvers::{conditional_levy_expectation, Method, PathIncrement, StepOutput};
pub use system::{to_formulation, CountingSystem, Formulation, SdeSystem};

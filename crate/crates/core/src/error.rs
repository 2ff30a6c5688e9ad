use thiserror::Error;

use crate::dyadic::DyadicTime;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SdeError {
    #[error("resolution exhausted: requested depth {depth} exceeds maximum {max_depth}")]
    ResolutionExhausted { depth: u32, max_depth: u32 },

    #[error("invalid interval: {0}")]
    InvalidInterval(String),

    #[error("time {0} is not dyadic at depth <= {1}")]
    NonDyadic(f64, u32),

    #[error("dimension mismatch: expected {expected}, got {got} ({what})")]
    DimensionMismatch { what: &'static str, expected: usize, got: usize },

    #[error("{method} requires an {required} system but got {got}")]
    FormulationMismatch { method: &'static str, required: &'static str, got: &'static str },

    #[error("{0} requires the space-time Levy area H")]
    MissingArea(&'static str),

    #[error("{0}")]
    MissingAuxiliary(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("non-finite state at t={t}")]
    NonFinite { t: f64 },

    #[error("malformed trace: {0}")]
    MalformedTrace(String),

    #[error("too many non-finite samples: {flagged} of {requested} (limit {limit})")]
    TooManyFlagged { flagged: usize, requested: usize, limit: usize },

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("step controller failed to reach {target} after {attempts} attempts")]
    NoProgress { target: DyadicTime, attempts: usize },
}

pub type Result<T> = std::result::Result<T, SdeError>;

use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: String, reason: String },

    #[error("unknown atomic level `{0}` (expected one of g0, g, i, e)")]
    UnknownLevel(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("operator layouts differ: {left} vs {right}")]
    LayoutMismatch { left: String, right: String },

    #[error("drive mode is `none`; a drive term was requested")]
    NoDrive,

    #[error("integrator step size underflow at t = {t_ns:.6e} ns")]
    StepSizeUnderflow { t_ns: f64 },

    #[error("integrator exceeded {max_steps} steps before t = {t_ns:.6e} ns")]
    ToleranceFailure { t_ns: f64, max_steps: usize },

    #[error("singular steady-state system: {0}")]
    SingularSystem(String),

    #[error("{what} did not converge after {iterations} iterations")]
    NoConvergence { what: String, iterations: usize },

    #[error("correlation window too short: |g1| at window end is {ratio:.3e} of its initial value (need < {threshold:.0e}); extend the tau window")]
    InsufficientDecay { ratio: f64, threshold: f64 },

    #[error("invalid fit input: {0}")]
    FitInput(String),

    #[error("grid not converged: {0}")]
    GridNotConverged(String),

    #[error("invalid scenario at `{pointer}`: {message}")]
    Config { pointer: String, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn param(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures of the numerical pipeline (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::StepSizeUnderflow { .. }
                | Error::ToleranceFailure { .. }
                | Error::SingularSystem(_)
                | Error::NoConvergence { .. }
                | Error::InsufficientDecay { .. }
                | Error::GridNotConverged(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;

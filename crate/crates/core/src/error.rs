use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors raised by the engine.
///
/// The variants fall into three classes (configuration, numerics, I/O) so
/// front ends can map them onto distinct exit codes via [`Error::class`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid configuration in `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("failed to parse scenario {}: {source}", path.display())]
    Parse {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("could not place agent {placed} of {requested} in source region after {attempts} attempts; use a larger region or a smaller count")]
    Placement {
        placed: usize,
        requested: usize,
        attempts: usize,
    },

    #[error("target {target} has no traversable grid node")]
    UnreachableTarget { target: u32 },

    #[error("unknown target id {requested}; available ids: {available:?}")]
    UnknownTarget { requested: u32, available: Vec<u32> },

    #[error("non-finite state for agent {agent} at t = {t}")]
    NonFinite { agent: usize, t: f64 },

    #[error("step size collapsed below h_min at t = {t} (worst component {component}, error ratio {ratio:.3e})")]
    StepCollapse { t: f64, component: usize, ratio: f64 },

    #[error("invariant violated at t = {t}: {what}")]
    Invariant { t: f64, what: String },

    #[error("no bracketing cell for the standoff condition on the search box; residual grid:\n{dump}")]
    NoBracket { dump: String },

    #[error("calibration did not converge: residual {residual:.3e} after {iterations} iterations")]
    NoConvergence { residual: f64, iterations: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Coarse error class used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Numeric,
    Io,
}

impl Error {
    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::InvalidInput(_)
            | Error::Config { .. }
            | Error::Parse { .. }
            | Error::Placement { .. }
            | Error::UnreachableTarget { .. }
            | Error::UnknownTarget { .. } => ErrorClass::Config,
            Error::NonFinite { .. }
            | Error::StepCollapse { .. }
            | Error::Invariant { .. }
            | Error::NoBracket { .. }
            | Error::NoConvergence { .. } => ErrorClass::Numeric,
            Error::Io(_) => ErrorClass::Io,
        }
    }
}

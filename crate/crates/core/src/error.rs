use thiserror::Error;

use crate::solver::{SolveReport, ThicknessField};

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("unknown cell id {id} (mesh has {count} cells)")]
    Lookup { id: usize, count: usize },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("non-finite value in {0}")]
    Numeric(String),

    #[error("constraint violation: {0}")]
    ConstraintViolation(String),

    #[error("configuration error: {0}")]
    Configuration(String),

    #[error("mismatch: {0}")]
    Mismatch(String),

    /// The NCP solve did not converge; carries the last iterate so callers can
    /// inspect or dump it. Never treated as a solution.
    #[error("solver did not converge{}: {} iterations, complementarity {:.3e}",
        step.map(|s| format!(" at step {s}")).unwrap_or_default(),
        report.iterations, report.complementarity)]
    NotConverged {
        step: Option<usize>,
        last: Box<ThicknessField>,
        report: Box<SolveReport>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

use thiserror::Error;

use crate::minimizer::SegmentResult;

/// Errors raised across the library.
#[derive(Debug, Error)]
pub enum FkError {
    /// An argument lies outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),
    /// A query falls outside the computed region (chain window, supertile layout).
    #[error("range error: {0}")]
    Range(String),
    /// A precondition of a construction is not met.
    #[error("precondition failed: {0}")]
    Precondition(String),
    /// Every start of a minimization failed to reach the tolerance.
    #[error("no start converged: {message}")]
    Convergence {
        message: String,
        best: Box<SegmentResult>,
    },
    /// The search for a dense-set approximation ran out of levels.
    #[error("approximation failed: best relative gap {best_gap:e} at level {level}")]
    Approximation { best_gap: f64, level: usize },
    #[error("invalid input: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, FkError>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(FkError::Domain(msg.into()))
}

pub(crate) fn range<T>(msg: impl Into<String>) -> Result<T> {
    Err(FkError::Range(msg.into()))
}

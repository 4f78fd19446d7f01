use thiserror::Error;

use crate::gp::TrainTrace;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// Cholesky failed on the raw matrix and on every jitter escalation.
    #[error(
        "covariance is not positive definite after {attempts} attempts \
         (n = {size}, diag range [{min_diag:.3e}, {max_diag:.3e}], last jitter {last_jitter:.1e})"
    )]
    NotPositiveDefinite {
        attempts: usize,
        size: usize,
        min_diag: f64,
        max_diag: f64,
        last_jitter: f64,
    },

    #[error("predictive variance {0:.3e} is negative beyond clamp tolerance")]
    NegativeVariance(f64),

    #[error("training produced a non-finite loss at iteration {iteration}")]
    Diverged {
        iteration: usize,
        trace: Box<TrainTrace>,
    },

    #[error("candidate pool is empty")]
    EmptyPool,

    #[error("oracle failure: {0}")]
    Oracle(String),

    #[error("point outside valid domain: {0}")]
    OutOfDomain(String),

    #[error("configuration error: {0}")]
    Config(String),

    /// Some experiment cells failed; artifacts for the others were written.
    #[error("{failed} of {total} experiment cells failed; first: {first}")]
    CellsFailed {
        failed: usize,
        total: usize,
        first: String,
    },

    #[error("consistency check failed: {0}")]
    Inconsistent(String),

    #[error("malformed input file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    /// True for errors caused by user configuration rather than runtime failure.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_))
    }
}

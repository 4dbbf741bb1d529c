use thiserror::Error;

use crate::adversary::ScenarioViolation;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A precondition on the arguments was violated.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("graph is disconnected")]
    Disconnected,

    #[error("laplacian has {zeros} zero eigenvalues; expected exactly one")]
    RankDeficient { zeros: usize },

    #[error("non-unique minimizer: aggregate curvature is singular")]
    NonUniqueMinimizer,

    /// Supports differ, so the divergence is infinite and the support
    /// condition on admissible scenario pairs is violated.
    #[error("infinite divergence: {0}")]
    InfiniteDivergence(String),

    #[error("iterates diverged (non-finite value) at round {round}")]
    Diverged { round: usize },

    #[error("scenario violates admissibility constraints: {0}")]
    Scenario(ScenarioViolation),

    #[error("exhaustive enumeration over {n} agents exceeds the cap of {cap}; use sampling mode (reports a lower bound)")]
    EnumerationTooLarge { n: usize, cap: usize },

    #[error("invalid config: {0}")]
    Config(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    /// Process exit code for this error: 2 for configuration or validation
    /// problems, 3 for numeric failures, 1 for I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Diverged { .. }
            | Error::NotSymmetric(_)
            | Error::RankDeficient { .. }
            | Error::NonUniqueMinimizer
            | Error::InfiniteDivergence(_) => 3,
            Error::Io(_) => 1,
            _ => 2,
        }
    }
}

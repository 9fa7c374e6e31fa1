use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("fit failed for algorithm `{algorithm}`: {message}")]
    Fit { algorithm: String, message: String },

    #[error("loss evaluation failed: {0}")]
    Loss(String),

    /// A user-supplied function broke its declared contract (antisymmetry, bound).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid distribution: {0}")]
    Distribution(String),

    #[error("enumeration needs {needed} tuples, budget is {limit}")]
    Budget { needed: u128, limit: u128 },

    #[error("protocol `{protocol}` exceeded its budget of {max_rounds} rounds")]
    RoundsExceeded { protocol: String, max_rounds: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("verification failed: {0}")]
    Verification(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn fit(algorithm: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Fit {
            algorithm: algorithm.into(),
            message: message.into(),
        }
    }

    /// Process exit code used by the command-line runner.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Json(_) | Error::Domain(_) => 2,
            Error::Verification(_) => 3,
            Error::Budget { .. } | Error::RoundsExceeded { .. } => 4,
            _ => 1,
        }
    }
}

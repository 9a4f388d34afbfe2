use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("fixed-point iteration did not converge after {iterations} iterations (last delta {delta:e})")]
    NonConvergence { iterations: usize, delta: f64 },

    #[error("innovation covariance H X H^T + Sigma is numerically singular")]
    SingularInnovation,

    #[error("covariance factorization failed: {0}")]
    FactorizationFailure(String),

    #[error("gain is not block-replicated: block {block} differs from the first by {deviation:e}")]
    BlockStructureViolation { block: usize, deviation: f64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("attack block {index} is nonzero but sensor {index} is not compromised")]
    SparsityViolation { index: usize },

    #[error("order statistic rank {rank} is outside 1..={len}")]
    RankOutOfRange { rank: i64, len: usize },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("config error at `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

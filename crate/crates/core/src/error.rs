use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid instance: {0}")]
    InvalidInstance(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("model requires item sizes but the instance has none")]
    MissingSizes,

    #[error("operation not supported for the {family} family: {reason}")]
    Unsupported {
        family: &'static str,
        reason: String,
    },

    /// Agent has zero marginal value for the whole allocation, so its
    /// term in the Lindahl conditions is undefined.
    #[error("agent {agent} has zero marginal value at this allocation")]
    DegenerateAgent { agent: usize },

    #[error("instance too large for brute-force search: {0}")]
    TooLarge(String),

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("allocation is outside the feasible set: {0}")]
    NotFeasible(String),

    #[error("sampler failed: {0}")]
    Sampler(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl Error {
    /// Stable machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidInstance(_) => "invalid_instance",
            Error::InvalidModel(_) => "invalid_model",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::MissingSizes => "missing_sizes",
            Error::Unsupported { .. } => "unsupported",
            Error::DegenerateAgent { .. } => "degenerate_agent",
            Error::TooLarge(_) => "too_large",
            Error::Infeasible(_) => "infeasible",
            Error::NotFeasible(_) => "not_feasible",
            Error::Sampler(_) => "sampler",
            Error::Config(_) => "config",
            Error::Parse { .. } => "parse",
            Error::Io(_) => "io",
        }
    }
}

use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("marginal for variables {tuple:?} has no co-observed samples and smoothing is zero")]
    NoSupport { tuple: Vec<usize> },

    #[error("marginal set is missing tuple {tuple:?}")]
    MissingTuple { tuple: Vec<usize> },

    #[error("evidence has zero probability under the model")]
    ZeroEvidence,

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("tensor with {entries} entries exceeds the cap of {cap}")]
    TooLarge { entries: usize, cap: usize },

    #[error("{path}: line {line}, column {column}: {message}")]
    Parse {
        path: String,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Whether the error stems from input data rather than the numerics.
    pub fn is_data_error(&self) -> bool {
        !matches!(self, Error::Numerical(_) | Error::NonFinite(_))
    }
}

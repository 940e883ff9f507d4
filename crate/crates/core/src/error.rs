use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid warping function: {0}")]
    InvalidWarping(String),

    #[error("degenerate SRSF: {0}")]
    DegenerateSrsf(String),

    #[error("warping is not invertible: {0}")]
    NonInvertible(String),

    #[error("fit failed: {0}")]
    Fit(String),

    #[error("degenerate misclassification oracle: {0}")]
    DegenerateOracle(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}

use thiserror::Error;

/// Errors produced by the estimation library.
#[derive(Debug, Error)]
pub enum Error {
    /// Dimension or shape mismatch between inputs.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A record or dataset violates a structural invariant.
    #[error("invalid data: {0}")]
    InvalidData(String),

    /// Malformed input file, with the 1-based line where it was detected.
    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    /// Argument outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Cressie-Read index outside the supported range.
    #[error("unsupported lambda {lambda}: {reason}")]
    UnsupportedLambda { lambda: f64, reason: String },

    /// A response category is never observed, so the divergence has no
    /// interior minimizer.
    #[error("separation: category {category} ({label}) is never observed in the data")]
    Separation { category: usize, label: String },

    /// A matrix that must be inverted is singular or too ill-conditioned.
    #[error("singular {context} (condition {condition:.3e}); near-null directions: {directions}")]
    Singular {
        context: String,
        condition: f64,
        directions: String,
    },

    /// An operation precondition does not hold.
    #[error("precondition failed: {0}")]
    Precondition(String),

    /// Invalid simulation or solver configuration.
    #[error("config error in `{field}`: {message}")]
    Config { field: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn config(field: &str, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.to_string(),
            message: message.into(),
        }
    }
}

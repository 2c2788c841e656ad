use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// A domain object failed validation; names the offending field.
    #[error("invalid {field}: {message}")]
    Validation { field: String, message: String },

    /// Tensor dimensions do not line up; names the axes involved.
    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    Shape {
        context: String,
        expected: String,
        got: String,
    },

    /// Only the three-way spatial partition is implemented.
    #[error("unsupported kernel size {0}: spatial partitioning requires K = 3")]
    UnsupportedKernel(usize),

    /// Inconsistent or impossible configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// An operation was called outside its contract.
    #[error("usage error: {0}")]
    Usage(String),

    /// A document could not be parsed; locates the failure.
    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    /// Point configuration too degenerate for rigid alignment.
    #[error("alignment undefined: {0}")]
    Degenerate(String),

    /// A non-finite value showed up mid-computation.
    #[error("non-finite value in {tensor}")]
    NonFinite { tensor: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn validation(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn shape(
        context: impl Into<String>,
        expected: impl Into<String>,
        got: impl Into<String>,
    ) -> Self {
        Error::Shape {
            context: context.into(),
            expected: expected.into(),
            got: got.into(),
        }
    }

    pub fn parse(location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            location: location.into(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

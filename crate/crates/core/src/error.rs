use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by estimation, data handling and I/O.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("singular system in {context} (condition estimate {condition:.3e})")]
    Singular { context: String, condition: f64 },

    #[error("gamma selection failed: every grid evaluation was singular")]
    SelectionFailed,

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("json serialization: {0}")]
    Json(#[from] serde_json::Error),

    #[error("config: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

impl Error {
    /// Copy of an error that is reported for several methods at once.
    /// I/O sources cannot be cloned, so those variants collapse to `Data`.
    pub(crate) fn duplicate(&self) -> Error {
        match self {
            Error::InvalidArgument(m) => Error::InvalidArgument(m.clone()),
            Error::Singular { context, condition } => Error::Singular {
                context: context.clone(),
                condition: *condition,
            },
            Error::SelectionFailed => Error::SelectionFailed,
            Error::Unsupported(m) => Error::Unsupported(m.clone()),
            Error::Config(m) => Error::Config(m.clone()),
            other => Error::Data(other.to_string()),
        }
    }
}

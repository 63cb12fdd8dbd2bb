use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed arguments: wrong shapes, out-of-range parameters, empty inputs.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A matrix function or metric was evaluated outside its domain (e.g. a non-PD matrix).
    #[error("domain error: {0}")]
    DomainError(String),

    /// The data does not carry enough information for the requested estimate.
    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    /// An iterative routine did not converge or produced an unusable result.
    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("class {class} present in source but missing from target")]
    MissingClass { class: i32 },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("format error in {path} at byte offset {offset}: {message}")]
    Format {
        path: PathBuf,
        offset: u64,
        message: String,
    },

    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::DomainError(msg.into())
    }

    pub(crate) fn degenerate(msg: impl Into<String>) -> Self {
        Error::DegenerateInput(msg.into())
    }

    pub(crate) fn numerical(msg: impl Into<String>) -> Self {
        Error::NumericalFailure(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Prefixes the message with extra context, keeping the variant.
    pub fn context(self, ctx: impl std::fmt::Display) -> Self {
        match self {
            Error::InvalidInput(m) => Error::InvalidInput(format!("{ctx}: {m}")),
            Error::DomainError(m) => Error::DomainError(format!("{ctx}: {m}")),
            Error::DegenerateInput(m) => Error::DegenerateInput(format!("{ctx}: {m}")),
            Error::NumericalFailure(m) => Error::NumericalFailure(format!("{ctx}: {m}")),
            other => other,
        }
    }
}

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument violated an operation's precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    /// Learnable quantizer parameters became non-finite or otherwise unusable.
    #[error("corrupt quantizer parameters: {0}")]
    ParameterCorruption(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A table or encoding is inconsistent with the quantizer it was built from.
    #[error("internal consistency: {0}")]
    Consistency(String),

    #[error("invalid {what} format: {reason}")]
    Format { what: &'static str, reason: String },

    #[error("config: {0}")]
    Config(String),

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn format(what: &'static str, reason: impl Into<String>) -> Self {
        Error::Format {
            what,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

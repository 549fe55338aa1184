use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor extents that do not line up for the requested operation.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// Invalid configuration value (stride, factor, patch size, ...).
    #[error("config error: {0}")]
    Config(String),

    /// The operation was called in a way its contract does not allow.
    #[error("usage error: {0}")]
    Usage(String),

    /// NaN or infinity where finite values are required.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Input for which the result is undefined (e.g. Otsu on a constant image).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("unsupported format ({format}): {reason}")]
    Format { format: String, reason: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Inconsistent shapes or hyperparameters.
    #[error("configuration error: {0}")]
    Config(String),

    /// Malformed or out-of-range input data.
    #[error("data error: {0}")]
    Data(String),

    /// A file that does not follow its binary or text layout.
    #[error("format error: {0}")]
    Format(String),

    /// Zero variance where a spread is required.
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// NaN or infinity where a finite value is required.
    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("out of range: {0}")]
    Range(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

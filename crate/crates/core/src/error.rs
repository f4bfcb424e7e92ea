use std::path::PathBuf;

/// Errors produced by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Shapes, sizes or settings that do not fit together.
    #[error("configuration error: {0}")]
    Config(String),

    /// A rectangle or index outside the addressed tensor.
    #[error("index error: {0}")]
    Index(String),

    /// Input data outside the accepted domain (non-finite pixels, wrong bit depth).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Non-finite values, divergence, or a failed numerical check.
    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("parse error in {path} at line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },

    /// Malformed or unsupported binary data (checkpoints).
    #[error("format error: {0}")]
    Format(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error on {path}: {message}")]
    Image { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    /// True for errors caused by input data (files, manifests, images), as
    /// opposed to numerical failures.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. }
                | Error::Format(_)
                | Error::Io { .. }
                | Error::Image { .. }
                | Error::InvalidInput(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

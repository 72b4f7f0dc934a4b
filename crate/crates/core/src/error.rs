use std::path::PathBuf;

use thiserror::Error;

/// Errors surfaced by every module of the crate.
///
/// The variants map onto the process exit codes used by the command line
/// front end: usage problems, malformed data, and violated internal
/// contracts are kept apart so callers can react differently.
#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("sentence {sentence}: {message}")]
    Structure { sentence: String, message: String },

    #[error("row {row}: {message}")]
    Format { row: usize, message: String },

    #[error("{0}")]
    Usage(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    File { path: PathBuf, message: String },
}

impl Error {
    pub fn usage(message: impl Into<String>) -> Self {
        Error::Usage(message.into())
    }

    pub fn contract(message: impl Into<String>) -> Self {
        Error::Contract(message.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn file(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::File {
            path: path.into(),
            message: message.into(),
        }
    }

    /// True for errors caused by malformed input data rather than misuse.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. } | Error::Structure { .. } | Error::Format { .. } | Error::File { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;

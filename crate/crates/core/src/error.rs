use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    Shape {
        context: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("invalid state: {0}")]
    State(String),
    #[error("config key `{key}`: {message}")]
    Config { key: String, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("checkpoint format error: {0}")]
    Format(String),
    #[error("checkpoint corrupted: {0}")]
    Corrupt(String),
    #[error("episode {episode}: {source}")]
    Training {
        episode: u64,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn shape(context: &'static str, expected: usize, got: usize) -> Self {
        Error::Shape {
            context,
            expected,
            got,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }
}

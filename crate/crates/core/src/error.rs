use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A documented precondition or invariant was broken by the caller or by an input file.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("parse error in {context}: {message}")]
    Parse { context: String, message: String },

    #[error("config error ({path}): {message}")]
    Config { path: PathBuf, message: String },

    #[error("backend error: {0}")]
    Backend(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn parse(context: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            context: context.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub fn read_to_string(path: &std::path::Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

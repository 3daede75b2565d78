use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("corpus is empty after tokenization")]
    EmptyCorpus,
    #[error("corpus too small: {have} tokens, need at least {need}")]
    CorpusTooSmall { have: usize, need: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("token id {id} out of range for vocabulary of size {vocab_size}")]
    Vocab { id: usize, vocab_size: usize },
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("invalid experience: {0}")]
    InvalidExperience(String),
    #[error("memory buffer is empty")]
    EmptyBuffer,
    #[error("config error for `{key}`: {msg}")]
    Config { key: String, msg: String },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("report error: {0}")]
    Report(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn config(key: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            msg: msg.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } => 2,
            Error::EmptyCorpus
            | Error::CorpusTooSmall { .. }
            | Error::Vocab { .. }
            | Error::Report(_)
            | Error::Io { .. } => 3,
            Error::Numerical(_) | Error::Shape(_) | Error::InvalidExperience(_) | Error::EmptyBuffer => 4,
            Error::Checkpoint(_) => 5,
        }
    }
}

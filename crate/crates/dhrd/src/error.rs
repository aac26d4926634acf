use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(dhrd_core::Error),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("config key {key}: {reason}")]
    Config { key: String, reason: String },
    #[error("{}:{line}: malformed line: {reason}", path.display())]
    MalformedLine { path: PathBuf, line: usize, reason: String },
    #[error("{}:{line}: record has no id", path.display())]
    MissingId { path: PathBuf, line: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("dataset is empty")]
    EmptyDataset,
}

impl Error {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Error::Io { path: path.to_path_buf(), source }
    }
}

impl From<dhrd_core::Error> for Error {
    fn from(e: dhrd_core::Error) -> Self {
        match e {
            dhrd_core::Error::Config { key, reason } => Error::Config { key: key.into(), reason },
            other => Error::Core(other),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

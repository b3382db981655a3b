use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Core(#[from] feddrop_core::Error),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("{path}: malformed dataset at line {line}: {msg}")]
    Dataset { path: PathBuf, line: usize, msg: String },
    #[error("{path}: corrupt checkpoint: {msg}")]
    Checkpoint { path: PathBuf, msg: String },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

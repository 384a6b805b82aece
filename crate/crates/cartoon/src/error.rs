use std::path::PathBuf;

use cartoon_core::checkpoint::CheckpointError;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] cartoon_core::Error),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot decode image: {0}")]
    Decode(String),
    #[error("cannot encode image: {0}")]
    Encode(String),
    #[error("configuration: {0}")]
    Config(String),
    #[error("survey log {}: line {line}: {reason}", path.display())]
    Log { path: PathBuf, line: usize, reason: String },
}

impl From<CheckpointError> for Error {
    fn from(e: CheckpointError) -> Self {
        Error::Core(e.into())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Attaches a path to an IO error.
pub(crate) fn io_at(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
    let path = path.into();
    move |source| Error::Io { path, source }
}

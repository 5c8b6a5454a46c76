use std::path::{Path, PathBuf};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] gon_core::Error),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("IDX {what} at byte offset {offset}: {reason}")]
    Idx { what: &'static str, offset: usize, reason: String },
    #[error("raw tensor import: {0}")]
    Raw(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("image: {0}")]
    Image(String),
    #[error("config: {0}")]
    Config(String),
    #[error("metrics CSV: {0}")]
    Csv(String),
}

impl Error {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// Process exit code: 1 for configuration problems, 2 for everything
    /// raised while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 1,
            _ => 2,
        }
    }
}

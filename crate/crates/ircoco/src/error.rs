use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    /// Malformed file contents; `line` is 1-based for line-oriented formats.
    #[error("{}{}: {detail}", path.display(), line.map(|l| format!(":{l}")).unwrap_or_default())]
    Format {
        path: PathBuf,
        line: Option<usize>,
        detail: String,
    },
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] ircoco_core::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn format(path: &Path, line: Option<usize>, detail: impl Into<String>) -> Self {
        Error::Format {
            path: path.to_path_buf(),
            line,
            detail: detail.into(),
        }
    }
}

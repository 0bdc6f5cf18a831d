use std::path::{Path, PathBuf};

pub type Result<T, E = LabError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum LabError {
    #[error(transparent)]
    Core(#[from] mmr_core::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    /// Malformed file content. `position` is a line number for text files
    /// and a byte offset for binary ones.
    #[error("{path}: {position}: {message}")]
    Format {
        path: PathBuf,
        position: String,
        message: String,
    },
    #[error("{0}")]
    Usage(String),
    #[error("server: {0}")]
    Server(String),
}

impl LabError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        LabError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn format(path: &Path, position: impl Into<String>, message: impl Into<String>) -> Self {
        LabError::Format {
            path: path.to_path_buf(),
            position: position.into(),
            message: message.into(),
        }
    }

    /// Stable machine-readable category for the CLI error line.
    pub fn kind(&self) -> &'static str {
        match self {
            LabError::Core(mmr_core::Error::Config(_)) => "config",
            LabError::Core(mmr_core::Error::PairMismatch(_)) => "pair_mismatch",
            LabError::Core(mmr_core::Error::NonFinite { .. }) => "non_finite",
            LabError::Core(_) => "core",
            LabError::Io { .. } => "io",
            LabError::Format { .. } => "format",
            LabError::Usage(_) => "usage",
            LabError::Server(_) => "server",
        }
    }
}

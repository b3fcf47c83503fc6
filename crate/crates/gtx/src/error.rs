use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] gtx_core::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    /// Malformed text or an unknown key in a config file.
    #[error("config schema error in {path}: {message}")]
    Schema { path: PathBuf, message: String },
    #[error("refusing to resume: the config differs from {path}\n{diff}")]
    ResumeMismatch { path: PathBuf, diff: String },
    #[error("output directory {0} is not empty; pass --resume to continue a run")]
    NotEmpty(PathBuf),
    /// Missing or corrupt artifact, named by path.
    #[error("{path}: {message}")]
    Artifact { path: PathBuf, message: String },
    #[error("{0}")]
    Usage(String),
    /// The command ran but produced a failing result.
    #[error("{0}")]
    Failed(String),
}

pub type Result<T> = std::result::Result<T, CliError>;

/// Attaches `path` to an I/O error.
pub(crate) fn io_at(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
    let path = path.into();
    move |source| CliError::Io { path, source }
}

pub(crate) fn artifact(path: impl Into<PathBuf>, message: impl std::fmt::Display) -> CliError {
    CliError::Artifact {
        path: path.into(),
        message: message.to_string(),
    }
}

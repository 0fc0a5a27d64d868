use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HerdError {
    #[error(transparent)]
    Core(#[from] herdkit_core::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    ConfigParse(String),
    #[error("checkpoint {path}: {reason}")]
    Checkpoint { path: PathBuf, reason: String },
    #[error("csv: {0}")]
    Csv(String),
    #[error("{0}")]
    Usage(String),
}

impl HerdError {
    /// Short category used in the CLI's one-line error.
    pub fn kind(&self) -> &'static str {
        match self {
            HerdError::Core(herdkit_core::Error::InvalidConfig(_)) => "invalid-config",
            HerdError::Core(herdkit_core::Error::NonFinite(_)) => "non-finite",
            HerdError::Core(_) => "core",
            HerdError::Io { .. } => "io",
            HerdError::ConfigParse(_) => "config-parse",
            HerdError::Checkpoint { .. } => "checkpoint",
            HerdError::Csv(_) => "csv",
            HerdError::Usage(_) => "usage",
        }
    }
}

impl From<csv::Error> for HerdError {
    fn from(e: csv::Error) -> Self {
        HerdError::Csv(e.to_string())
    }
}

pub type Result<T, E = HerdError> = std::result::Result<T, E>;

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> HerdError {
    let path = path.into();
    move |source| HerdError::Io { path, source }
}

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config file {0} could not be read: {1}")]
    MissingConfig(PathBuf, String),

    #[error("usage: {0}")]
    Usage(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("{source} (loss trace written to {trace})")]
    Training { source: cocoa_core::Error, trace: PathBuf },

    #[error(transparent)]
    Core(#[from] cocoa_core::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CliError {
    /// 2 for usage problems and unreadable configs, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::MissingConfig(..) | CliError::Usage(_) => 2,
            _ => 1,
        }
    }
}

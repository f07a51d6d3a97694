use std::path::PathBuf;

use serde_json::json;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("missing checkpoint: {}", .0.display())]
    MissingCheckpoint(PathBuf),

    #[error("{0}")]
    Run(#[from] cka_core::Error),

    #[error("{0}")]
    Io(#[from] std::io::Error),

    #[error("{0}")]
    Failed(String),
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        CliError::Config {
            path: path.into(),
            message: message.into(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } => 2,
            CliError::MissingCheckpoint(_) | CliError::Run(cka_core::Error::Missing(_)) => 3,
            _ => 1,
        }
    }

    /// Single-line machine-readable form for stderr.
    pub fn to_json_line(&self) -> String {
        let kind = match self {
            CliError::Config { .. } => "config",
            CliError::MissingCheckpoint(_) | CliError::Run(cka_core::Error::Missing(_)) => "missing-checkpoint",
            CliError::Run(_) => "run",
            CliError::Io(_) => "io",
            CliError::Failed(_) => "failed",
        };
        let mut v = json!({ "error": kind, "message": self.to_string() });
        if let CliError::Config { path, .. } = self {
            v["path"] = json!(path);
        }
        v.to_string()
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Failed(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Run(e.into())
    }
}

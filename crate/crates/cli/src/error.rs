use std::path::Path;

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] tatt_core::Error),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{path}: {message}")]
    Table { path: String, message: String },
}

impl CliError {
    pub fn io(path: &Path, err: impl std::fmt::Display) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            message: err.to_string(),
        }
    }

    pub fn table(path: &Path, message: impl Into<String>) -> Self {
        CliError::Table {
            path: path.display().to_string(),
            message: message.into(),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Core(e) => e.kind(),
            CliError::Io { .. } => "io",
            CliError::Config(_) => "config",
            CliError::Table { .. } => "input",
        }
    }

    /// Process exit code: 2 for problems with the request itself, 1 for
    /// failures while computing.
    pub fn exit_code(&self) -> i32 {
        match self.kind() {
            "config" | "input" | "dimension" | "unknown_center" => 2,
            _ => 1,
        }
    }

    pub fn record(&self) -> ErrorRecord {
        ErrorRecord {
            error: ErrorBody {
                kind: self.kind().to_string(),
                message: self.to_string(),
                exit_code: self.exit_code(),
            },
        }
    }
}

/// Machine-readable error, written as JSON to stderr.
#[derive(Debug, Serialize)]
pub struct ErrorRecord {
    pub error: ErrorBody,
}

#[derive(Debug, Serialize)]
pub struct ErrorBody {
    pub kind: String,
    pub message: String,
    pub exit_code: i32,
}

pub type Result<T> = std::result::Result<T, CliError>;

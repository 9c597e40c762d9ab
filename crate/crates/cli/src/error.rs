use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),

    /// `line` counts the header as line 1; `column` is 1-based.
    #[error("{path}: line {line}, column {column}: {message}")]
    Csv {
        path: String,
        line: u64,
        column: usize,
        message: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Json { path: String, message: String },

    #[error(transparent)]
    Core(#[from] wsign_core::Error),
}

impl CliError {
    pub fn validation(msg: impl Into<String>) -> Self {
        CliError::Validation(msg.into())
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    /// 2 for numerical failures, 1 for everything the caller can fix.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) if is_numerical(e) => 2,
            _ => 1,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Validation(_) => "validation",
            CliError::Csv { .. } => "csv",
            CliError::Io { .. } => "io",
            CliError::Json { .. } => "config",
            CliError::Core(e) if is_numerical(e) => "numerical",
            CliError::Core(_) => "validation",
        }
    }
}

fn is_numerical(e: &wsign_core::Error) -> bool {
    e.is_numerical() || matches!(e, wsign_core::Error::NotPositiveDefinite { .. })
}

pub type Result<T> = std::result::Result<T, CliError>;

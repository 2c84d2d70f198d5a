use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("I/O error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Io(_) => 4,
        }
    }

    pub fn config(key: &str, msg: impl std::fmt::Display) -> Self {
        CliError::Config(format!("{key}: {msg}"))
    }

    pub fn io(path: &std::path::Path, msg: impl std::fmt::Display) -> Self {
        CliError::Io(format!("{}: {msg}", path.display()))
    }
}

/// Wraps a library error with what was being done when it occurred.
pub fn model(context: &str, e: grips::Error) -> CliError {
    if e.is_numerical() {
        CliError::Numerical(format!("{context}: {e}"))
    } else {
        CliError::Config(format!("{context}: {e}"))
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

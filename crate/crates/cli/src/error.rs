//! CLI error taxonomy, mapped onto process exit codes.

use std::fmt;

/// Errors surfaced by the command-line layer.
#[derive(Debug)]
pub enum CliError {
    /// Invalid configuration or input file; exit code 2.
    Config(String),
    /// Numerical failure inside a solver; exit code 3.
    Numerical(String),
    /// A run completed but an acceptance verdict failed; exit code 1.
    Verdict(String),
    /// Filesystem trouble; exit code 3.
    Io(std::io::Error),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(msg) => write!(f, "config error: {msg}"),
            CliError::Numerical(msg) => write!(f, "numerical error: {msg}"),
            CliError::Verdict(msg) => write!(f, "verdict failure: {msg}"),
            CliError::Io(err) => write!(f, "io error: {err}"),
        }
    }
}

impl std::error::Error for CliError {}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Verdict(_) => 1,
            CliError::Config(_) => 2,
            CliError::Numerical(_) | CliError::Io(_) => 3,
        }
    }

    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }
}

impl From<std::io::Error> for CliError {
    fn from(err: std::io::Error) -> Self {
        CliError::Io(err)
    }
}

impl From<distinv_core::Error> for CliError {
    fn from(err: distinv_core::Error) -> Self {
        use distinv_core::Error as E;
        match &err {
            E::InvalidParameter { .. } | E::DimensionMismatch { .. } | E::ShapeError { .. } => {
                CliError::Config(err.to_string())
            }
            _ => CliError::Numerical(err.to_string()),
        }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(err: serde_json::Error) -> Self {
        CliError::Config(err.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;

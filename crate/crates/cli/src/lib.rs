//! Command-line front end: config parsing, panel ingestion, experiment
//! dispatch and report emission.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod panel;
pub mod run;

/// Failure classes, each with its own process exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("config: {0}")]
    Config(String),
    #[error("data: {0}")]
    Data(String),
    #[error("acceptance check failed: {0}")]
    Acceptance(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Config(_) => 3,
            CliError::Data(_) => 4,
            CliError::Acceptance(_) => 5,
        }
    }
}

impl From<heavyfpca::Error> for CliError {
    fn from(e: heavyfpca::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

//! Experiment driver around the core library: config handling, the
//! train/sweep loop with resumable result files, imputation of CSV
//! files from saved ensembles, and report aggregation.

pub mod config;
pub mod report;
pub mod runner;

/// Driver failure, split by exit code: config errors exit 1, runtime
/// errors exit 2.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Runtime(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(msg) => write!(f, "config error: {msg}"),
            CliError::Runtime(msg) => write!(f, "error: {msg}"),
        }
    }
}

impl std::error::Error for CliError {}

pub type Result<T> = std::result::Result<T, CliError>;

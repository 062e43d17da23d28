//! Error type shared across the crate.

use std::fmt;

#[derive(Debug)]
pub enum Error {
    /// Mismatched dimensions, invalid arguments, or a violated API contract.
    Contract(String),
    /// Malformed input data (CSV parse failures, bad sentinel values, ...).
    Data(String),
    /// Malformed or unreadable checkpoint / manifest.
    Checkpoint(String),
    /// Training failure (divergence, non-finite loss).
    Training(String),
    Io(std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Contract(msg) => write!(f, "contract violation: {msg}"),
            Error::Data(msg) => write!(f, "data error: {msg}"),
            Error::Checkpoint(msg) => write!(f, "checkpoint error: {msg}"),
            Error::Training(msg) => write!(f, "training error: {msg}"),
            Error::Io(err) => write!(f, "io error: {err}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(err) => Some(err),
            _ => None,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err)
    }
}

impl From<csv::Error> for Error {
    fn from(err: csv::Error) -> Self {
        Error::Data(err.to_string())
    }
}

/// Shorthand for `Error::Contract` with a formatted message.
macro_rules! contract {
    ($cond:expr, $($arg:tt)*) => {
        if !$cond {
            return Err($crate::error::Error::Contract(format!($($arg)*)));
        }
    };
}

pub(crate) use contract;

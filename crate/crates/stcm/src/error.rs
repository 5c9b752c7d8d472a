//! Crate-wide error type.

use std::fmt;

/// Errors produced by any stcm operation.
#[derive(Debug)]
pub enum Error {
    /// Tensor shapes do not satisfy an operation's contract.
    Shape(String),
    /// An argument is outside its documented range.
    Argument(String),
    /// A file does not match its documented byte format; `offset` is the
    /// position of the first offending byte.
    Format { offset: u64, message: String },
    /// A dataset cannot support the requested operation (e.g. no usable scenes).
    Data(String),
    /// A configuration value is missing, unknown, or malformed.
    Config(String),
    /// A numeric failure: NaN/Inf in a computation or a solver breakdown.
    Numeric(String),
    Io(std::io::Error),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape(m) => write!(f, "shape error: {m}"),
            Error::Argument(m) => write!(f, "argument error: {m}"),
            Error::Format { offset, message } => {
                write!(f, "format error at byte {offset}: {message}")
            }
            Error::Data(m) => write!(f, "data error: {m}"),
            Error::Config(m) => write!(f, "config error: {m}"),
            Error::Numeric(m) => write!(f, "numeric error: {m}"),
            Error::Io(e) => write!(f, "io error: {e}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(e) => Some(e),
            _ => None,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e)
    }
}

pub type Result<T> = std::result::Result<T, Error>;

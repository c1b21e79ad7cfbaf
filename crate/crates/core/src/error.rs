//! Crate-wide error type.

use std::fmt;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Shape or dimension mismatch; message names the offending quantity.
    Dimension(String),
    /// A caller-supplied value is outside its documented range.
    InvalidArgument(String),
    /// A file did not match the expected schema; message carries the field path.
    Schema(String),
    /// A numerical run produced non-finite values and was aborted.
    Numerical(String),
    /// Filesystem or serialization failure.
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Dimension(m) => write!(f, "dimension mismatch: {m}"),
            Error::InvalidArgument(m) => write!(f, "invalid argument: {m}"),
            Error::Schema(m) => write!(f, "schema violation: {m}"),
            Error::Numerical(m) => write!(f, "numerical failure: {m}"),
            Error::Io(m) => write!(f, "io error: {m}"),
        }
    }
}

impl std::error::Error for Error {}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Schema(e.to_string())
    }
}

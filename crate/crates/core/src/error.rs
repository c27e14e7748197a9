use std::io;

use thiserror::Error;

/// Errors produced by the workbench.
#[derive(Debug, Error)]
pub enum Error {
    /// A numeric argument outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Invalid or inconsistent configuration.
    #[error("config error: {0}")]
    Config(String),

    /// Configuration text that failed to parse.
    #[error("config parse error at line {line}: {msg}")]
    ConfigParse { line: usize, msg: String },

    /// A target or measurement outside the unambiguous extent of the radar.
    #[error("out of range: {0}")]
    OutOfRange(String),

    /// Tensor or matrix dimensions that do not fit the operation.
    #[error("shape error: {0}")]
    Shape(String),

    /// Binary or text file that could not be decoded.
    #[error(transparent)]
    Format(#[from] FormatError),

    /// Matrix that could not be inverted.
    #[error("singular matrix: {0}")]
    Singular(String),

    /// Activation cache does not belong to the weights passed to backward.
    #[error("stale activation cache")]
    StaleCache,

    /// NaN or infinity where a finite number was required.
    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Decoding failures for the on-disk formats.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum FormatError {
    #[error("bad magic")]
    BadMagic,
    #[error("truncated file: expected {expected} bytes, found {found}")]
    Truncated { expected: u64, found: u64 },
    #[error("dimension overflow: {0}")]
    DimensionOverflow(String),
    #[error("invalid record at line {line}: {msg}")]
    Record { line: usize, msg: String },
    #[error("invalid utf-8 in name")]
    Utf8,
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

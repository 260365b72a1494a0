//! Error type shared by every module of the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("bad magic bytes (expected \"UFD1\")")]
    BadMagic,

    #[error("truncated payload: header declares {expected} complex values, found {found}")]
    Truncated { expected: u64, found: u64 },

    #[error("trailing bytes after declared payload")]
    TrailingData,

    #[error("declared dimensions overflow the addressable size")]
    DimOverflow,

    #[error("solver diverged: {0}")]
    Divergence(String),

    #[error("contrast undefined: reference patch has zero mean amplitude")]
    UndefinedContrast,

    #[error("patch sweep produced no valid placements")]
    EmptySweep,

    #[error("config parse error on line {line}: {msg}")]
    Config { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

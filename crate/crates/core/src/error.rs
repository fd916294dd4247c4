use std::io;

use thiserror::Error;

/// Errors produced anywhere in the simulator.
#[derive(Debug, Error)]
pub enum Error {
    #[error("angle {0} rad is outside the array sector [-pi/2, pi/2]")]
    AngleOutOfSector(f64),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("beam index {index} is outside [1, {codebook_size}]")]
    InvalidBeamIndex { index: usize, codebook_size: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("unsupported format version: found {found}, expected {expected}")]
    Version { found: u16, expected: u16 },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("I/O error: {0}")]
    Io(#[from] io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    /// Process exit code for the command-line tool: 2 for configuration and
    /// argument errors, 3 for I/O and file format errors, 4 for numeric failures.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::AngleOutOfSector(_)
            | Error::DimensionMismatch { .. }
            | Error::InvalidBeamIndex { .. }
            | Error::Config(_)
            | Error::InvalidParameter(_) => 2,
            Error::Io(_) | Error::Parse(_) | Error::Version { .. } => 3,
            Error::Numeric(_) => 4,
        }
    }
}

//! Error types with a fixed mapping onto process exit codes:
//! configuration and contract problems exit 2, I/O and parse problems exit 3.

use crate::exit;
use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("{path}: bad magic at offset 0: found {found:02x?}, expected {expected:02x?}")]
    BadMagic {
        path: PathBuf,
        found: [u8; 4],
        expected: [u8; 4],
    },
    #[error("{path}: unsupported version {found} at offset 4")]
    UnsupportedVersion { path: PathBuf, found: u16 },
    #[error("{path}: {field} is {found} at offset {offset}, expected {expected}")]
    UnexpectedDimension {
        path: PathBuf,
        field: &'static str,
        offset: u64,
        found: u64,
        expected: u64,
    },
    #[error(
        "{path}: truncated at offset {offset}: header implies {expected_bytes} bytes, \
         file has {actual_bytes}"
    )]
    Truncated {
        path: PathBuf,
        offset: u64,
        expected_bytes: u64,
        actual_bytes: u64,
    },
    #[error("{path}: invalid label {label} at offset {offset}: {reason}")]
    InvalidLabel {
        path: PathBuf,
        offset: u64,
        label: u8,
        reason: String,
    },
    #[error("{path}: checksum mismatch: stored {stored}, computed {computed}")]
    ChecksumMismatch {
        path: PathBuf,
        stored: String,
        computed: String,
    },
    #[error("{path}: {msg} at offset {offset}")]
    Malformed {
        path: PathBuf,
        offset: u64,
        msg: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl FormatError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        FormatError::Io {
            path: path.into(),
            source,
        }
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] ave_core::Error),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Core(_) => exit::USAGE,
            CliError::Format(_) | CliError::Io { .. } => exit::IO_PARSE,
        }
    }
}

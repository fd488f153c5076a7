//! Error type shared by all modules of the crate.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

/// Everything that can go wrong while building or running the model.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Error {
    /// Two operands have incompatible shapes for the named operation.
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    /// An axis argument is out of range for the operand's rank.
    InvalidAxis {
        op: &'static str,
        axis: usize,
        rank: usize,
    },
    /// A structural precondition was violated (non-scalar loss, empty
    /// sequence, out-of-range index, ...).
    Contract { op: &'static str, msg: String },
    /// A configuration value is inconsistent or out of range.
    Config { msg: String },
}

pub type Result<T> = core::result::Result<T, Error>;

impl Error {
    pub fn contract(op: &'static str, msg: impl Into<String>) -> Self {
        Error::Contract {
            op,
            msg: msg.into(),
        }
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config { msg: msg.into() }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::ShapeMismatch { op, left, right } => {
                write!(f, "{op}: incompatible shapes {left:?} and {right:?}")
            }
            Error::InvalidAxis { op, axis, rank } => {
                write!(f, "{op}: axis {axis} out of range for rank {rank}")
            }
            Error::Contract { op, msg } => write!(f, "{op}: {msg}"),
            Error::Config { msg } => write!(f, "invalid configuration: {msg}"),
        }
    }
}

impl core::error::Error for Error {}

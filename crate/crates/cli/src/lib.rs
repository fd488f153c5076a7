//! IO, file formats, dataset tooling and command implementations for the
//! `ave` binary. The numerics live in `ave-core`; this crate owns everything
//! that touches the filesystem: the `AVEF` feature-file container, `AVEC`
//! checkpoints, the synthetic dataset generator, the training/evaluation
//! loops, the gradient-check command and the attention heatmap exporter.

pub mod batches;
pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod error;
pub mod eval;
pub mod feature_file;
pub mod heatmap;
pub mod synth;
pub mod train;

pub use error::{CliError, FormatError};

/// Process exit codes shared by every subcommand.
pub mod exit {
    pub const SUCCESS: i32 = 0;
    pub const VERIFICATION_FAILURE: i32 = 1;
    pub const USAGE: i32 = 2;
    pub const IO_PARSE: i32 = 3;
}

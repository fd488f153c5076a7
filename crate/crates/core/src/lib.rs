//! Recursive audio-visual fusion by joint co-attention.
//!
//! This crate implements the full numeric stack for a segment-level
//! audio-visual event classifier: a tape-based reverse-mode autodiff engine
//! over dense `f64` tensors, bidirectional LSTM re-representation with
//! residual embedding, audio-guided early fusion of 7x7 visual grids, a
//! recursive joint co-attention stack with selectable fusion strategies, a
//! Bi-LSTM + MLP prediction head with multi-label soft-margin loss, and an
//! Adam optimizer. Everything is deterministic under a seed and verifiable
//! against a central finite-difference oracle ([`gradcheck`]).
//!
//! The crate is `no_std` compatible (`alloc` required); file formats, dataset
//! generation and the CLI live in the companion `ave-cli` crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod error;
pub(crate) mod fmath;
pub mod fusion;
pub mod gradcheck;
pub mod head;
pub mod jca;
pub mod linear;
pub mod lstm;
pub mod model;
pub mod optim;
pub mod rng;
pub mod tape;
pub mod tensor;

pub use error::{Error, Result};
pub use tape::{Tape, Var};
pub use tensor::Tensor;

/// Width of a raw per-segment audio feature vector.
pub const RAW_AUDIO_DIM: usize = 128;
/// Spatial positions of a raw per-segment visual feature grid (7 x 7).
pub const VISUAL_POSITIONS: usize = 49;
/// Channels at each spatial position of a raw visual feature grid.
pub const VISUAL_CHANNELS: usize = 512;
/// Side length of the square spatial grid.
pub const VISUAL_GRID_SIDE: usize = 7;

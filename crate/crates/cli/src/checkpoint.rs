//! The `AVEC` checkpoint container.
//!
//! Layout (little-endian, floats are f64 on disk):
//!
//! ```text
//! offset 0   magic "AVEC"
//! offset 4   version (u16, currently 1)
//! offset 6   config_len (u32), then config_len bytes of run-config JSON
//! then       block_count (u32)
//! per block  name_len (u16), name bytes (utf-8),
//!            rank (u8), rank extents (u32 each),
//!            numel f64 values
//! trailer    32-byte SHA-256 over everything before it
//! ```
//!
//! Blocks are written in the model's registry order; loading restores every
//! parameter bitwise and fails on any checksum, name, or shape mismatch.

use crate::config::RunConfig;
use crate::error::{CliError, FormatError};
use ave_core::model::Model;
use sha2::{Digest, Sha256};
use std::path::Path;

pub const MAGIC: [u8; 4] = *b"AVEC";
pub const VERSION: u16 = 1;

pub fn save_checkpoint(path: &Path, config: &RunConfig, model: &Model) -> Result<(), CliError> {
    let config_json = config.to_json()?;
    let blocks = model.visit();

    let mut bytes: Vec<u8> = Vec::new();
    bytes.extend_from_slice(&MAGIC);
    bytes.extend_from_slice(&VERSION.to_le_bytes());
    bytes.extend_from_slice(&(config_json.len() as u32).to_le_bytes());
    bytes.extend_from_slice(config_json.as_bytes());
    bytes.extend_from_slice(&(blocks.len() as u32).to_le_bytes());
    for (name, tensor) in &blocks {
        bytes.extend_from_slice(&(name.len() as u16).to_le_bytes());
        bytes.extend_from_slice(name.as_bytes());
        bytes.push(tensor.rank() as u8);
        for &extent in tensor.shape() {
            bytes.extend_from_slice(&(extent as u32).to_le_bytes());
        }
        for &v in tensor.iter() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&bytes);
    bytes.extend_from_slice(&digest);
    std::fs::write(path, bytes).map_err(|e| CliError::io(path.to_path_buf(), e))
}

/// Reads a checkpoint back into a freshly built model.
pub fn load_checkpoint(path: &Path) -> Result<(RunConfig, Model), CliError> {
    let bytes = std::fs::read(path).map_err(|e| FormatError::io(path, e))?;
    let malformed = |offset: u64, msg: &str| FormatError::Malformed {
        path: path.to_path_buf(),
        offset,
        msg: msg.into(),
    };

    if bytes.len() < 32 {
        return Err(malformed(0, "file shorter than its checksum trailer").into());
    }
    let (body, stored) = bytes.split_at(bytes.len() - 32);
    let computed = Sha256::digest(body);
    if stored != computed.as_slice() {
        return Err(FormatError::ChecksumMismatch {
            path: path.to_path_buf(),
            stored: hex(stored),
            computed: hex(&computed),
        }
        .into());
    }

    let mut r = SliceReader { body, at: 0 };
    let magic: [u8; 4] = r.take(4, path)?.try_into().expect("length checked");
    if magic != MAGIC {
        return Err(FormatError::BadMagic {
            path: path.to_path_buf(),
            found: magic,
            expected: MAGIC,
        }
        .into());
    }
    let version = u16::from_le_bytes(r.take(2, path)?.try_into().unwrap());
    if version != VERSION {
        return Err(FormatError::UnsupportedVersion {
            path: path.to_path_buf(),
            found: version,
        }
        .into());
    }
    let config_len = u32::from_le_bytes(r.take(4, path)?.try_into().unwrap()) as usize;
    let config_at = r.at;
    let config_bytes = r.take(config_len, path)?;
    let config: RunConfig = serde_json::from_slice(config_bytes)
        .map_err(|e| malformed(config_at as u64, &format!("config echo: {e}")))?;

    let model_config = config.model_config()?;
    let mut model = Model::zeros(model_config)?;

    let block_count = u32::from_le_bytes(r.take(4, path)?.try_into().unwrap()) as usize;
    let registry_len = model.visit().len();
    if block_count != registry_len {
        return Err(malformed(
            (r.at - 4) as u64,
            &format!("{block_count} blocks for a registry of {registry_len}"),
        )
        .into());
    }

    let mut params = model.visit_mut();
    for (expected_name, tensor) in params.iter_mut() {
        let name_at = r.at;
        let name_len = u16::from_le_bytes(r.take(2, path)?.try_into().unwrap()) as usize;
        let name = std::str::from_utf8(r.take(name_len, path)?)
            .map_err(|_| malformed(name_at as u64, "block name is not utf-8"))?;
        if name != expected_name {
            return Err(malformed(
                name_at as u64,
                &format!("block {name:?} where registry expects {expected_name:?}"),
            )
            .into());
        }
        let rank = r.take(1, path)?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(u32::from_le_bytes(r.take(4, path)?.try_into().unwrap()) as usize);
        }
        if shape != tensor.shape() {
            return Err(malformed(
                name_at as u64,
                &format!(
                    "block {name:?} has shape {shape:?}, registry expects {:?}",
                    tensor.shape()
                ),
            )
            .into());
        }
        let data_bytes = r.take(tensor.numel() * 8, path)?;
        for (slot, chunk) in tensor.data_mut().iter_mut().zip(data_bytes.chunks_exact(8)) {
            *slot = f64::from_le_bytes(chunk.try_into().unwrap());
        }
    }
    if r.at != body.len() {
        return Err(malformed(r.at as u64, "trailing bytes after the last block").into());
    }
    drop(params);
    Ok((config, model))
}

struct SliceReader<'a> {
    body: &'a [u8],
    at: usize,
}

impl<'a> SliceReader<'a> {
    fn take(&mut self, len: usize, path: &Path) -> Result<&'a [u8], FormatError> {
        if self.at + len > self.body.len() {
            return Err(FormatError::Truncated {
                path: path.to_path_buf(),
                offset: self.at as u64,
                expected_bytes: (self.at + len) as u64 + 32,
                actual_bytes: (self.body.len() + 32) as u64,
            });
        }
        let slice = &self.body[self.at..self.at + len];
        self.at += len;
        Ok(slice)
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

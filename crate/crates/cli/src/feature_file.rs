//! The `AVEF` feature-file container.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! offset size  field
//! 0      4     magic "AVEF"
//! 4      2     version (u16, currently 1)
//! 6      4     sequence_count (u32)
//! 10     2     segments_per_sequence (u16, N)
//! 12     2     audio_dim (u16, always 128)
//! 14     2     visual_positions (u16, always 49)
//! 16     2     visual_channels (u16, always 512)
//! 18     ...   per sequence:
//!                N * 128 audio features (f32)
//!                N * 49 * 512 visual features (f32, position-major)
//!                N label bytes (class index; 255 is reserved invalid)
//! ```
//!
//! Features are f32 on disk and widened to f64 in memory, so a write/read
//! round trip of f32-representable data is bitwise exact. Reading streams
//! sequence by sequence; every parse error carries the byte offset of the
//! first inconsistency.

use crate::error::FormatError;
use ave_core::model::SequencePair;
use ave_core::tensor::Tensor;
use ave_core::{RAW_AUDIO_DIM, VISUAL_CHANNELS, VISUAL_POSITIONS};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

pub const MAGIC: [u8; 4] = *b"AVEF";
pub const VERSION: u16 = 1;
pub const HEADER_BYTES: u64 = 18;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureFileHeader {
    pub sequence_count: u32,
    pub segments_per_sequence: u16,
    pub audio_dim: u16,
    pub visual_positions: u16,
    pub visual_channels: u16,
}

impl FeatureFileHeader {
    pub fn bytes_per_sequence(&self) -> u64 {
        let n = self.segments_per_sequence as u64;
        n * self.audio_dim as u64 * 4
            + n * self.visual_positions as u64 * self.visual_channels as u64 * 4
            + n
    }

    pub fn expected_file_bytes(&self) -> u64 {
        HEADER_BYTES + self.sequence_count as u64 * self.bytes_per_sequence()
    }
}

pub fn write_feature_file(path: &Path, sequences: &[SequencePair]) -> Result<(), FormatError> {
    let segments = sequences
        .first()
        .map(|s| s.labels.len())
        .unwrap_or_default();
    for (i, seq) in sequences.iter().enumerate() {
        seq.validate(segments).map_err(|e| FormatError::Malformed {
            path: path.to_path_buf(),
            offset: 0,
            msg: format!("sequence {i} rejected before writing: {e}"),
        })?;
    }

    let file = File::create(path).map_err(|e| FormatError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io_err = |e| FormatError::io(path, e);

    w.write_all(&MAGIC).map_err(io_err)?;
    w.write_all(&VERSION.to_le_bytes()).map_err(io_err)?;
    w.write_all(&(sequences.len() as u32).to_le_bytes())
        .map_err(io_err)?;
    w.write_all(&(segments as u16).to_le_bytes())
        .map_err(io_err)?;
    w.write_all(&(RAW_AUDIO_DIM as u16).to_le_bytes())
        .map_err(io_err)?;
    w.write_all(&(VISUAL_POSITIONS as u16).to_le_bytes())
        .map_err(io_err)?;
    w.write_all(&(VISUAL_CHANNELS as u16).to_le_bytes())
        .map_err(io_err)?;

    for seq in sequences {
        for &v in seq.audio.iter() {
            w.write_all(&(v as f32).to_le_bytes()).map_err(io_err)?;
        }
        for grid in &seq.visual {
            for &v in grid.iter() {
                w.write_all(&(v as f32).to_le_bytes()).map_err(io_err)?;
            }
        }
        w.write_all(&seq.labels).map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

struct Cursor<R> {
    inner: R,
    offset: u64,
}

/// Streaming reader over an `AVEF` file.
pub struct FeatureFileReader {
    cursor: Cursor<BufReader<File>>,
    path: PathBuf,
    header: FeatureFileHeader,
    read_so_far: u32,
    expected_classes: Option<u16>,
    file_bytes: u64,
}

impl FeatureFileReader {
    /// Opens the file and validates the header. When `expected_classes` is
    /// given, every label byte must be below it.
    pub fn open(path: &Path, expected_classes: Option<u16>) -> Result<Self, FormatError> {
        let file = File::open(path).map_err(|e| FormatError::io(path, e))?;
        let file_bytes = file.metadata().map_err(|e| FormatError::io(path, e))?.len();
        let mut cursor = Cursor {
            inner: BufReader::new(file),
            offset: 0,
        };

        let mut magic = [0u8; 4];
        read_field(&mut cursor, path, &mut magic, HEADER_BYTES, file_bytes)?;
        if magic != MAGIC {
            return Err(FormatError::BadMagic {
                path: path.to_path_buf(),
                found: magic,
                expected: MAGIC,
            });
        }
        let version = read_u16(&mut cursor, path, HEADER_BYTES, file_bytes)?;
        if version != VERSION {
            return Err(FormatError::UnsupportedVersion {
                path: path.to_path_buf(),
                found: version,
            });
        }
        let sequence_count = read_u32(&mut cursor, path, HEADER_BYTES, file_bytes)?;
        let header_fields = [
            ("segments_per_sequence", None),
            ("audio_dim", Some(RAW_AUDIO_DIM as u16)),
            ("visual_positions", Some(VISUAL_POSITIONS as u16)),
            ("visual_channels", Some(VISUAL_CHANNELS as u16)),
        ];
        let mut values = [0u16; 4];
        for (slot, (field, expected)) in values.iter_mut().zip(header_fields) {
            let at = cursor.offset;
            let value = read_u16(&mut cursor, path, HEADER_BYTES, file_bytes)?;
            if let Some(expected) = expected {
                if value != expected {
                    return Err(FormatError::UnexpectedDimension {
                        path: path.to_path_buf(),
                        field,
                        offset: at,
                        found: value as u64,
                        expected: expected as u64,
                    });
                }
            } else if value == 0 {
                return Err(FormatError::Malformed {
                    path: path.to_path_buf(),
                    offset: at,
                    msg: format!("{field} must be positive"),
                });
            }
            *slot = value;
        }

        let header = FeatureFileHeader {
            sequence_count,
            segments_per_sequence: values[0],
            audio_dim: values[1],
            visual_positions: values[2],
            visual_channels: values[3],
        };
        Ok(FeatureFileReader {
            cursor,
            path: path.to_path_buf(),
            header,
            read_so_far: 0,
            expected_classes,
            file_bytes,
        })
    }

    pub fn header(&self) -> FeatureFileHeader {
        self.header
    }

    fn read_sequence(&mut self) -> Result<SequencePair, FormatError> {
        let n = self.header.segments_per_sequence as usize;
        let expected = self.header.expected_file_bytes();

        let mut audio = vec![0.0f64; n * RAW_AUDIO_DIM];
        read_f32_into(
            &mut self.cursor,
            &self.path,
            &mut audio,
            expected,
            self.file_bytes,
        )?;
        let mut visual = Vec::with_capacity(n);
        for _ in 0..n {
            let mut grid = vec![0.0f64; VISUAL_POSITIONS * VISUAL_CHANNELS];
            read_f32_into(
                &mut self.cursor,
                &self.path,
                &mut grid,
                expected,
                self.file_bytes,
            )?;
            visual.push(
                Tensor::new(vec![VISUAL_POSITIONS, VISUAL_CHANNELS], grid)
                    .expect("grid buffer sized to shape"),
            );
        }
        let mut labels = vec![0u8; n];
        let label_offset = self.cursor.offset;
        read_field(
            &mut self.cursor,
            &self.path,
            &mut labels,
            expected,
            self.file_bytes,
        )?;
        for (i, &label) in labels.iter().enumerate() {
            let offset = label_offset + i as u64;
            if label == 255 {
                return Err(FormatError::InvalidLabel {
                    path: self.path.clone(),
                    offset,
                    label,
                    reason: "255 is reserved".into(),
                });
            }
            if let Some(classes) = self.expected_classes {
                if label as u16 >= classes {
                    return Err(FormatError::InvalidLabel {
                        path: self.path.clone(),
                        offset,
                        label,
                        reason: format!("class count is {classes}"),
                    });
                }
            }
        }

        Ok(SequencePair {
            audio: Tensor::new(vec![n, RAW_AUDIO_DIM], audio).expect("audio buffer sized"),
            visual,
            labels,
        })
    }
}

impl Iterator for FeatureFileReader {
    type Item = Result<SequencePair, FormatError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.read_so_far >= self.header.sequence_count {
            return None;
        }
        self.read_so_far += 1;
        Some(self.read_sequence())
    }
}

/// Reads the whole file; the streaming [`FeatureFileReader`] is the
/// incremental alternative.
pub fn read_feature_file(
    path: &Path,
    expected_classes: Option<u16>,
) -> Result<Vec<SequencePair>, FormatError> {
    FeatureFileReader::open(path, expected_classes)?.collect()
}

fn read_field<R: Read>(
    cursor: &mut Cursor<R>,
    path: &Path,
    buf: &mut [u8],
    expected_bytes: u64,
    file_bytes: u64,
) -> Result<(), FormatError> {
    let at = cursor.offset;
    let mut filled = 0;
    while filled < buf.len() {
        let n = cursor
            .inner
            .read(&mut buf[filled..])
            .map_err(|e| FormatError::io(path, e))?;
        if n == 0 {
            return Err(FormatError::Truncated {
                path: path.to_path_buf(),
                offset: at + filled as u64,
                expected_bytes,
                actual_bytes: file_bytes,
            });
        }
        filled += n;
    }
    cursor.offset += filled as u64;
    Ok(())
}

fn read_u16<R: Read>(
    cursor: &mut Cursor<R>,
    path: &Path,
    expected_bytes: u64,
    file_bytes: u64,
) -> Result<u16, FormatError> {
    let mut buf = [0u8; 2];
    read_field(cursor, path, &mut buf, expected_bytes, file_bytes)?;
    Ok(u16::from_le_bytes(buf))
}

fn read_u32<R: Read>(
    cursor: &mut Cursor<R>,
    path: &Path,
    expected_bytes: u64,
    file_bytes: u64,
) -> Result<u32, FormatError> {
    let mut buf = [0u8; 4];
    read_field(cursor, path, &mut buf, expected_bytes, file_bytes)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_f32_into<R: Read>(
    cursor: &mut Cursor<R>,
    path: &Path,
    out: &mut [f64],
    expected_bytes: u64,
    file_bytes: u64,
) -> Result<(), FormatError> {
    let mut bytes = vec![0u8; out.len() * 4];
    read_field(cursor, path, &mut bytes, expected_bytes, file_bytes)?;
    for (slot, chunk) in out.iter_mut().zip(bytes.chunks_exact(4)) {
        *slot = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]) as f64;
    }
    Ok(())
}

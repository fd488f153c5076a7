//! Synthetic AVE-style dataset generator.
//!
//! Each event class owns a fixed audio prototype and a visual prototype
//! concentrated on one class-specific position of the 7x7 grid. Event
//! segments are prototype plus gaussian noise; background segments are pure
//! noise labeled with the background class (index `classes`, the last one).
//! Generation is a pure function of the spec: prototypes are drawn first,
//! then sequences in order, all from one seeded ChaCha stream.
//!
//! Features are quantized to f32 before being returned so that writing them
//! to an `AVEF` file and reading them back is bitwise lossless.

use crate::error::CliError;
use ave_core::model::SequencePair;
use ave_core::rng;
use ave_core::tensor::Tensor;
use ave_core::{RAW_AUDIO_DIM, VISUAL_CHANNELS, VISUAL_POSITIONS};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticSpec {
    /// Event classes; the generated file uses `classes + 1` labels, the last
    /// one being the background.
    pub classes: usize,
    pub sequences_per_class: usize,
    /// Segments per sequence (N).
    pub segments: usize,
    /// Probability that a segment is background.
    pub background_rate: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), CliError> {
        if self.classes == 0 || self.sequences_per_class == 0 || self.segments == 0 {
            return Err(CliError::config(
                "classes, sequences_per_class and segments must all be positive",
            ));
        }
        if self.classes + 1 > 255 {
            return Err(CliError::config(
                "at most 254 event classes fit the label byte",
            ));
        }
        if !(0.0..1.0).contains(&self.background_rate) {
            return Err(CliError::config(format!(
                "background_rate must be in [0, 1), got {}",
                self.background_rate
            )));
        }
        if !self.noise_sigma.is_finite() || self.noise_sigma < 0.0 {
            return Err(CliError::config(format!(
                "noise_sigma must be finite and nonnegative, got {}",
                self.noise_sigma
            )));
        }
        Ok(())
    }

    /// Total classes including the background.
    pub fn class_count(&self) -> usize {
        self.classes + 1
    }

    pub fn background_label(&self) -> u8 {
        self.classes as u8
    }
}

/// The fixed per-class patterns behind a spec, exposed so tests can run
/// nearest-prototype oracles against the generated data.
pub struct Prototypes {
    /// One 128-wide audio prototype per class.
    pub audio: Vec<Vec<f64>>,
    /// The grid position each class concentrates on.
    pub position: Vec<usize>,
    /// The 512-wide channel pattern placed at that position.
    pub channel_pattern: Vec<Vec<f64>>,
}

fn draw_prototypes(spec: &SyntheticSpec, rng: &mut ChaCha8Rng) -> Prototypes {
    let mut audio = Vec::with_capacity(spec.classes);
    let mut position = Vec::with_capacity(spec.classes);
    let mut channel_pattern = Vec::with_capacity(spec.classes);
    for class in 0..spec.classes {
        audio.push(
            (0..RAW_AUDIO_DIM)
                .map(|_| quantize(rng::uniform(rng, -1.0, 1.0)))
                .collect(),
        );
        position.push(class % VISUAL_POSITIONS);
        channel_pattern.push(
            (0..VISUAL_CHANNELS)
                .map(|_| quantize(rng::uniform(rng, -1.0, 1.0)))
                .collect(),
        );
    }
    Prototypes {
        audio,
        position,
        channel_pattern,
    }
}

/// The prototypes a spec generates, without the sequences.
pub fn prototypes(spec: &SyntheticSpec) -> Result<Prototypes, CliError> {
    spec.validate()?;
    let mut rng = rng::seeded(spec.seed);
    Ok(draw_prototypes(spec, &mut rng))
}

/// Generates `classes * sequences_per_class` sequences, grouped by class.
pub fn generate(spec: &SyntheticSpec) -> Result<Vec<SequencePair>, CliError> {
    spec.validate()?;
    let mut rng = rng::seeded(spec.seed);
    let protos = draw_prototypes(spec, &mut rng);
    let noise = Normal::new(0.0, spec.noise_sigma)
        .map_err(|e| CliError::config(format!("noise sigma: {e}")))?;

    let mut sequences = Vec::with_capacity(spec.classes * spec.sequences_per_class);
    for class in 0..spec.classes {
        for _ in 0..spec.sequences_per_class {
            sequences.push(generate_sequence(spec, &protos, class, &noise, &mut rng));
        }
    }
    Ok(sequences)
}

fn generate_sequence(
    spec: &SyntheticSpec,
    protos: &Prototypes,
    class: usize,
    noise: &Normal<f64>,
    rng: &mut ChaCha8Rng,
) -> SequencePair {
    let n = spec.segments;
    let mut audio = vec![0.0f64; n * RAW_AUDIO_DIM];
    let mut visual = Vec::with_capacity(n);
    let mut labels = vec![0u8; n];

    for t in 0..n {
        let background = rng::unit_f64(rng) < spec.background_rate;
        labels[t] = if background {
            spec.background_label()
        } else {
            class as u8
        };

        let audio_row = &mut audio[t * RAW_AUDIO_DIM..(t + 1) * RAW_AUDIO_DIM];
        for (i, slot) in audio_row.iter_mut().enumerate() {
            let base = if background {
                0.0
            } else {
                protos.audio[class][i]
            };
            *slot = quantize(base + noise.sample(rng));
        }

        let mut grid = vec![0.0f64; VISUAL_POSITIONS * VISUAL_CHANNELS];
        for (i, slot) in grid.iter_mut().enumerate() {
            let base = if !background && i / VISUAL_CHANNELS == protos.position[class] {
                protos.channel_pattern[class][i % VISUAL_CHANNELS]
            } else {
                0.0
            };
            *slot = quantize(base + noise.sample(rng));
        }
        visual.push(
            Tensor::new(vec![VISUAL_POSITIONS, VISUAL_CHANNELS], grid)
                .expect("grid buffer sized to shape"),
        );
    }

    SequencePair {
        audio: Tensor::new(vec![n, RAW_AUDIO_DIM], audio).expect("audio buffer sized to shape"),
        visual,
        labels,
    }
}

fn quantize(v: f64) -> f64 {
    v as f32 as f64
}

//! Early-fusion attention heatmap export: one 7x7 CSV and one portable
//! graymap (P2) per segment of the chosen sequence.

use crate::error::CliError;
use ave_core::model::{EarlyFusionKind, Model, SequencePair};
use ave_core::tape::Tape;
use ave_core::{VISUAL_GRID_SIDE, VISUAL_POSITIONS};
use std::path::{Path, PathBuf};

#[derive(Debug)]
pub struct HeatmapFiles {
    pub csv: Vec<PathBuf>,
    pub pgm: Vec<PathBuf>,
}

/// Writes `seg_XXX.csv` and `seg_XXX.pgm` for every segment of
/// `sequences[index]` into `out_dir`. Weights are the early-fusion softmax
/// outputs; the images are max-normalized for visibility.
pub fn dump_attention(
    model: &Model,
    sequences: &[SequencePair],
    index: usize,
    out_dir: &Path,
) -> Result<HeatmapFiles, CliError> {
    if !matches!(model.config.early_fusion, EarlyFusionKind::AudioGuided) {
        return Err(CliError::config(
            "attention export requires an audio_guided early-fusion checkpoint",
        ));
    }
    if index >= sequences.len() {
        return Err(CliError::config(format!(
            "sequence index {index} out of range for {} sequences",
            sequences.len()
        )));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| CliError::io(out_dir.to_path_buf(), e))?;

    let tape = Tape::new();
    let (_, vars) = model.lease(&tape)?;
    let out = model.forward(&tape, &vars, &sequences[index], true)?;

    let mut files = HeatmapFiles {
        csv: Vec::new(),
        pgm: Vec::new(),
    };
    for (t, &weights_var) in out.attention.iter().enumerate() {
        let weights = tape.value(weights_var);
        debug_assert_eq!(weights.numel(), VISUAL_POSITIONS);

        let csv_path = out_dir.join(format!("seg_{t:03}.csv"));
        let mut csv = String::new();
        for row in 0..VISUAL_GRID_SIDE {
            let cells: Vec<String> = (0..VISUAL_GRID_SIDE)
                .map(|col| format!("{:.8}", weights.data()[row * VISUAL_GRID_SIDE + col]))
                .collect();
            csv.push_str(&cells.join(","));
            csv.push('\n');
        }
        std::fs::write(&csv_path, csv).map_err(|e| CliError::io(csv_path.clone(), e))?;
        files.csv.push(csv_path);

        let pgm_path = out_dir.join(format!("seg_{t:03}.pgm"));
        std::fs::write(&pgm_path, render_pgm(weights.data()))
            .map_err(|e| CliError::io(pgm_path.clone(), e))?;
        files.pgm.push(pgm_path);
    }
    Ok(files)
}

fn render_pgm(weights: &[f64]) -> String {
    let max = weights.iter().cloned().fold(f64::MIN, f64::max).max(1e-300);
    let mut pgm = format!("P2\n{VISUAL_GRID_SIDE} {VISUAL_GRID_SIDE}\n255\n");
    for row in 0..VISUAL_GRID_SIDE {
        let cells: Vec<String> = (0..VISUAL_GRID_SIDE)
            .map(|col| {
                let w = weights[row * VISUAL_GRID_SIDE + col];
                format!("{}", ((w / max) * 255.0).round() as u8)
            })
            .collect();
        pgm.push_str(&cells.join(" "));
        pgm.push('\n');
    }
    pgm
}

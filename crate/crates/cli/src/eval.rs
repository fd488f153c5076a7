//! Forward-only evaluation: segment accuracy, per-class accuracy and the
//! confusion matrix.

use crate::error::CliError;
use ave_core::model::{Model, SequencePair};
use ave_core::tape::Tape;
use std::path::Path;

pub struct EvalResult {
    pub hits: usize,
    pub segments: usize,
    /// `confusion[true_class][predicted_class]`, both over all classes
    /// including the background.
    pub confusion: Vec<Vec<usize>>,
}

impl EvalResult {
    pub fn accuracy(&self) -> f64 {
        self.hits as f64 / self.segments as f64
    }

    /// Per-class accuracy; `None` for classes with no segments.
    pub fn per_class_accuracy(&self) -> Vec<Option<f64>> {
        self.confusion
            .iter()
            .enumerate()
            .map(|(class, row)| {
                let total: usize = row.iter().sum();
                (total > 0).then(|| row[class] as f64 / total as f64)
            })
            .collect()
    }
}

/// Runs the model over every sequence and tallies argmax hits.
pub fn evaluate_sequences(
    model: &Model,
    sequences: &[SequencePair],
) -> Result<EvalResult, CliError> {
    if sequences.is_empty() {
        return Err(CliError::config("evaluation set is empty"));
    }
    let classes = model.config.class_count;
    let mut confusion = vec![vec![0usize; classes]; classes];
    let mut hits = 0;
    let mut segments = 0;
    for seq in sequences {
        let tape = Tape::new();
        let (_, vars) = model.lease(&tape)?;
        let out = model.forward(&tape, &vars, seq, false)?;
        let probs = tape.value(out.probs);
        for (row, &label) in seq.labels.iter().enumerate() {
            let predicted = probs.row_argmax(row);
            confusion[label as usize][predicted] += 1;
            if predicted == label as usize {
                hits += 1;
            }
            segments += 1;
        }
    }
    Ok(EvalResult {
        hits,
        segments,
        confusion,
    })
}

/// Confusion matrix as CSV: header row of predicted classes, one row per
/// true class. Row sums equal that class's segment count.
pub fn write_confusion_csv(path: &Path, result: &EvalResult) -> Result<(), CliError> {
    let classes = result.confusion.len();
    let mut body = String::from("true\\pred");
    for c in 0..classes {
        body.push_str(&format!(",{c}"));
    }
    body.push('\n');
    for (class, row) in result.confusion.iter().enumerate() {
        body.push_str(&class.to_string());
        for count in row {
            body.push_str(&format!(",{count}"));
        }
        body.push('\n');
    }
    std::fs::write(path, body).map_err(|e| CliError::io(path.to_path_buf(), e))
}

//! Prediction layer: joint Bi-LSTM over the fused features, a two-layer MLP
//! with 1024/256 hidden units, a final sigmoid, the multi-label soft-margin
//! loss, and the segment-accuracy metric. The predicted category of a segment
//! is the argmax of its score row; the background is an ordinary category
//! (the last class index).

use crate::error::{Error, Result};
use crate::linear::{linear, LinearParams, LinearVars};
use crate::lstm::{bilstm_rerepresent, BiLstmParams, BiLstmVars};
use crate::tape::{Tape, Var, VarCursor};
use crate::tensor::Tensor;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use rand_core::RngCore;

pub const MLP_HIDDEN_1: usize = 1024;
pub const MLP_HIDDEN_2: usize = 256;

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionHeadParams {
    /// Joint encoder over the `N x (d_a + d_v)` fused sequence.
    pub joint_bilstm: BiLstmParams,
    pub fc1: LinearParams,
    pub fc2: LinearParams,
    pub fc3: LinearParams,
}

impl PredictionHeadParams {
    /// `residual` must match the flag later passed to [`predict`]: it decides
    /// the joint cells' step input width.
    pub fn init<R: RngCore>(
        d_a: usize,
        d_v: usize,
        class_count: usize,
        residual: bool,
        rng: &mut R,
    ) -> Self {
        let width = d_a + d_v;
        let hidden = width / 2;
        let step_in = if residual { width + hidden } else { width };
        PredictionHeadParams {
            joint_bilstm: BiLstmParams::init(step_in, hidden, rng),
            fc1: LinearParams::init(width, MLP_HIDDEN_1, rng),
            fc2: LinearParams::init(MLP_HIDDEN_1, MLP_HIDDEN_2, rng),
            fc3: LinearParams::init(MLP_HIDDEN_2, class_count, rng),
        }
    }

    pub fn zeros(d_a: usize, d_v: usize, class_count: usize, residual: bool) -> Self {
        let width = d_a + d_v;
        let hidden = width / 2;
        let step_in = if residual { width + hidden } else { width };
        PredictionHeadParams {
            joint_bilstm: BiLstmParams::zeros(step_in, hidden),
            fc1: LinearParams::zeros(width, MLP_HIDDEN_1),
            fc2: LinearParams::zeros(MLP_HIDDEN_1, MLP_HIDDEN_2),
            fc3: LinearParams::zeros(MLP_HIDDEN_2, class_count),
        }
    }

    pub fn class_count(&self) -> usize {
        self.fc3.out_dim()
    }

    pub fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        self.joint_bilstm.visit(&format!("{prefix}.bilstm"), out);
        self.fc1.visit(&format!("{prefix}.fc1"), out);
        self.fc2.visit(&format!("{prefix}.fc2"), out);
        self.fc3.visit(&format!("{prefix}.fc3"), out);
    }

    pub fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        self.joint_bilstm
            .visit_mut(&format!("{prefix}.bilstm"), out);
        self.fc1.visit_mut(&format!("{prefix}.fc1"), out);
        self.fc2.visit_mut(&format!("{prefix}.fc2"), out);
        self.fc3.visit_mut(&format!("{prefix}.fc3"), out);
    }

    pub fn vars_from(&self, tape: &Tape, cursor: &mut VarCursor<'_>) -> Result<HeadVars> {
        Ok(HeadVars {
            joint_bilstm: self.joint_bilstm.vars_from(tape, cursor)?,
            fc1: self.fc1.vars_from(tape, cursor)?,
            fc2: self.fc2.vars_from(tape, cursor)?,
            fc3: self.fc3.vars_from(tape, cursor)?,
        })
    }
}

pub struct HeadVars {
    pub joint_bilstm: BiLstmVars,
    pub fc1: LinearVars,
    pub fc2: LinearVars,
    pub fc3: LinearVars,
}

/// Pre-sigmoid scores and sigmoid probabilities, both `N x C`. The sigmoid is
/// applied exactly once here; the loss consumes the pre-sigmoid scores.
pub struct Prediction {
    pub scores: Var,
    pub probs: Var,
}

/// `sigmoid(MLP(Bi-LSTM([A | V])))` per segment.
pub fn predict(tape: &Tape, vars: &HeadVars, a: Var, v: Var, residual: bool) -> Result<Prediction> {
    let joint = tape.concat(&[a, v], 1)?;
    let encoded = bilstm_rerepresent(tape, &vars.joint_bilstm, joint, residual)?;
    let h1 = tape.relu(linear(tape, &vars.fc1, encoded)?)?;
    let h2 = tape.relu(linear(tape, &vars.fc2, h1)?)?;
    let scores = linear(tape, &vars.fc3, h2)?;
    let probs = tape.sigmoid(scores)?;
    Ok(Prediction { scores, probs })
}

/// Multi-label soft-margin loss on pre-sigmoid scores; see
/// [`Tape::mlsm_loss`] for the exact form.
pub fn mlsm_loss(tape: &Tape, scores: Var, targets: &Tensor, strict: bool) -> Result<Var> {
    tape.mlsm_loss(scores, targets, strict)
}

/// One-hot `N x classes` target matrix from per-segment class indices.
pub fn one_hot(labels: &[u8], classes: usize) -> Result<Tensor> {
    if labels.is_empty() {
        return Err(Error::contract("one_hot", "empty label list"));
    }
    let mut data = vec![0.0; labels.len() * classes];
    for (row, &label) in labels.iter().enumerate() {
        if label as usize >= classes {
            return Err(Error::contract(
                "one_hot",
                format!("label {label} out of range for {classes} classes"),
            ));
        }
        data[row * classes + label as usize] = 1.0;
    }
    Tensor::new(vec![labels.len(), classes], data)
}

/// Count of segments whose argmax matches the label, plus the segment count.
pub fn segment_hits(predictions: &Tensor, labels: &[u8]) -> Result<(usize, usize)> {
    let (n, _c) = predictions.dims2("segment_accuracy")?;
    if n != labels.len() {
        return Err(Error::contract(
            "segment_accuracy",
            format!("{n} prediction rows vs {} labels", labels.len()),
        ));
    }
    let mut hits = 0;
    for (row, &label) in labels.iter().enumerate() {
        if predictions.row_argmax(row) == label as usize {
            hits += 1;
        }
    }
    Ok((hits, n))
}

/// Fraction of segments whose argmax equals the label, micro-averaged.
pub fn segment_accuracy(predictions: &Tensor, labels: &[u8]) -> Result<f64> {
    if labels.is_empty() {
        return Err(Error::contract("segment_accuracy", "empty evaluation set"));
    }
    let (hits, total) = segment_hits(predictions, labels)?;
    Ok(hits as f64 / total as f64)
}

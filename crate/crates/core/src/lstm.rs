//! Bidirectional LSTM re-representation with residual embedding.
//!
//! With the residual embedding on, the step input of each direction is the
//! concatenation of that direction's previous output feature and the raw
//! segment feature, so the cell consumes `hidden + raw` columns. With it off
//! the raw feature alone is fed and the layer reduces to a plain Bi-LSTM.
//! Per-segment outputs are the backward feature concatenated with the forward
//! feature, stacked into an `N x 2*hidden` sequence matrix.

use crate::error::{Error, Result};
use crate::rng;
use crate::tape::{Tape, Var, VarCursor};
use crate::tensor::Tensor;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use rand_core::RngCore;

/// Gate order everywhere in this module: input, forget, output, candidate.
const GATES: [&str; 4] = ["i", "f", "o", "g"];

#[derive(Debug, Clone, PartialEq)]
pub struct LstmCellParams {
    /// One `hidden x in_dim` matrix per gate.
    pub input_weights: [Tensor; 4],
    /// One `hidden x hidden` matrix per gate.
    pub hidden_weights: [Tensor; 4],
    /// One `1 x hidden` row per gate.
    pub biases: [Tensor; 4],
}

impl LstmCellParams {
    /// Uniform init in `[-1/sqrt(hidden), 1/sqrt(hidden)]`; the forget-gate
    /// bias starts at exactly 1.0.
    pub fn init<R: RngCore>(in_dim: usize, hidden: usize, rng: &mut R) -> Self {
        let bound = 1.0 / crate::fmath::sqrt(hidden as f64);
        let mut params = LstmCellParams {
            input_weights: core::array::from_fn(|_| {
                rng::uniform_tensor(rng, &[hidden, in_dim], bound)
            }),
            hidden_weights: core::array::from_fn(|_| {
                rng::uniform_tensor(rng, &[hidden, hidden], bound)
            }),
            biases: core::array::from_fn(|_| rng::uniform_tensor(rng, &[1, hidden], bound)),
        };
        params.biases[1] = Tensor::ones(&[1, hidden]);
        params
    }

    pub fn zeros(in_dim: usize, hidden: usize) -> Self {
        LstmCellParams {
            input_weights: core::array::from_fn(|_| Tensor::zeros(&[hidden, in_dim])),
            hidden_weights: core::array::from_fn(|_| Tensor::zeros(&[hidden, hidden])),
            biases: core::array::from_fn(|_| Tensor::zeros(&[1, hidden])),
        }
    }

    pub fn hidden(&self) -> usize {
        self.input_weights[0].shape()[0]
    }

    pub fn in_dim(&self) -> usize {
        self.input_weights[0].shape()[1]
    }

    pub fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        for (g, t) in GATES.iter().zip(&self.input_weights) {
            out.push((format!("{prefix}.w_{g}"), t));
        }
        for (g, t) in GATES.iter().zip(&self.hidden_weights) {
            out.push((format!("{prefix}.u_{g}"), t));
        }
        for (g, t) in GATES.iter().zip(&self.biases) {
            out.push((format!("{prefix}.b_{g}"), t));
        }
    }

    pub fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        for (g, t) in GATES.iter().zip(&mut self.input_weights) {
            out.push((format!("{prefix}.w_{g}"), t));
        }
        for (g, t) in GATES.iter().zip(&mut self.hidden_weights) {
            out.push((format!("{prefix}.u_{g}"), t));
        }
        for (g, t) in GATES.iter().zip(&mut self.biases) {
            out.push((format!("{prefix}.b_{g}"), t));
        }
    }

    /// Consumes this cell's twelve leaves; weights are transposed once here
    /// so every timestep is a plain row-times-matrix product.
    pub fn vars_from(&self, tape: &Tape, cursor: &mut VarCursor<'_>) -> Result<LstmCellVars> {
        let mut input_t = [Var::default(); 4];
        let mut hidden_t = [Var::default(); 4];
        let mut biases = [Var::default(); 4];
        for slot in input_t.iter_mut() {
            *slot = tape.transpose(cursor.take()?)?;
        }
        for slot in hidden_t.iter_mut() {
            *slot = tape.transpose(cursor.take()?)?;
        }
        for slot in biases.iter_mut() {
            *slot = cursor.take()?;
        }
        Ok(LstmCellVars {
            input_t,
            hidden_t,
            biases,
            hidden: self.hidden(),
        })
    }
}

/// Tape-side view of one LSTM cell.
pub struct LstmCellVars {
    input_t: [Var; 4],
    hidden_t: [Var; 4],
    biases: [Var; 4],
    hidden: usize,
}

/// One LSTM update:
/// `i,f,o = sigmoid(affine)`, `g = tanh(affine)`,
/// `c = f*c_prev + i*g`, `h = o*tanh(c)`.
pub fn lstm_cell_step(
    tape: &Tape,
    cell: &LstmCellVars,
    x: Var,
    h_prev: Var,
    c_prev: Var,
) -> Result<(Var, Var)> {
    let pre = |gate: usize| -> Result<Var> {
        let from_input = tape.matmul(x, cell.input_t[gate])?;
        let from_hidden = tape.matmul(h_prev, cell.hidden_t[gate])?;
        tape.add(tape.add(from_input, from_hidden)?, cell.biases[gate])
    };
    let input_gate = tape.sigmoid(pre(0)?)?;
    let forget_gate = tape.sigmoid(pre(1)?)?;
    let output_gate = tape.sigmoid(pre(2)?)?;
    let candidate = tape.tanh(pre(3)?)?;
    let c = tape.add(
        tape.mul(forget_gate, c_prev)?,
        tape.mul(input_gate, candidate)?,
    )?;
    let h = tape.mul(output_gate, tape.tanh(c)?)?;
    Ok((h, c))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiLstmParams {
    pub forward_cell: LstmCellParams,
    pub backward_cell: LstmCellParams,
}

impl BiLstmParams {
    /// `step_in_dim` is the width actually fed to each cell per step
    /// (`raw + hidden` with the residual embedding, `raw` without).
    pub fn init<R: RngCore>(step_in_dim: usize, hidden: usize, rng: &mut R) -> Self {
        BiLstmParams {
            forward_cell: LstmCellParams::init(step_in_dim, hidden, rng),
            backward_cell: LstmCellParams::init(step_in_dim, hidden, rng),
        }
    }

    pub fn zeros(step_in_dim: usize, hidden: usize) -> Self {
        BiLstmParams {
            forward_cell: LstmCellParams::zeros(step_in_dim, hidden),
            backward_cell: LstmCellParams::zeros(step_in_dim, hidden),
        }
    }

    pub fn hidden(&self) -> usize {
        self.forward_cell.hidden()
    }

    /// Output feature width: both directions concatenated.
    pub fn out_dim(&self) -> usize {
        2 * self.hidden()
    }

    pub fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        self.forward_cell.visit(&format!("{prefix}.fwd"), out);
        self.backward_cell.visit(&format!("{prefix}.bwd"), out);
    }

    pub fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        self.forward_cell.visit_mut(&format!("{prefix}.fwd"), out);
        self.backward_cell.visit_mut(&format!("{prefix}.bwd"), out);
    }

    pub fn vars_from(&self, tape: &Tape, cursor: &mut VarCursor<'_>) -> Result<BiLstmVars> {
        Ok(BiLstmVars {
            forward: self.forward_cell.vars_from(tape, cursor)?,
            backward: self.backward_cell.vars_from(tape, cursor)?,
        })
    }
}

pub struct BiLstmVars {
    pub forward: LstmCellVars,
    pub backward: LstmCellVars,
}

/// Runs both directions over an `N x raw` sequence and stacks the per-segment
/// outputs `concat(backward_t, forward_t)` into an `N x 2*hidden` matrix.
pub fn bilstm_rerepresent(tape: &Tape, vars: &BiLstmVars, seq: Var, residual: bool) -> Result<Var> {
    let shape = tape.shape(seq);
    let (n, raw) = match shape.as_slice() {
        [n, raw] => (*n, *raw),
        _ => {
            return Err(Error::contract(
                "bilstm_rerepresent",
                format!("expected an N x raw sequence, got shape {shape:?}"),
            ))
        }
    };
    if n == 0 {
        return Err(Error::contract(
            "bilstm_rerepresent",
            "sequence must contain at least one segment",
        ));
    }
    let hidden = vars.forward.hidden;
    let expected_in = if residual { raw + hidden } else { raw };
    if vars.forward.hidden != vars.backward.hidden {
        return Err(Error::contract(
            "bilstm_rerepresent",
            "direction cells disagree on hidden width",
        ));
    }
    if tape.shape(vars.forward.input_t[0])[0] != expected_in {
        return Err(Error::ShapeMismatch {
            op: "bilstm_rerepresent",
            left: vec![expected_in],
            right: vec![tape.shape(vars.forward.input_t[0])[0]],
        });
    }

    let rows = tape.split(seq, 0, &vec![1; n])?;

    let run_direction = |cell: &LstmCellVars, order: &[usize]| -> Result<Vec<Var>> {
        let mut h = tape.constant(Tensor::zeros(&[1, hidden]));
        let mut c = tape.constant(Tensor::zeros(&[1, hidden]));
        let mut outputs = vec![Var::default(); n];
        for &t in order {
            let x = if residual {
                tape.concat(&[h, rows[t]], 1)?
            } else {
                rows[t]
            };
            let (h_new, c_new) = lstm_cell_step(tape, cell, x, h, c)?;
            h = h_new;
            c = c_new;
            outputs[t] = h;
        }
        Ok(outputs)
    };

    let forward_order: Vec<usize> = (0..n).collect();
    let backward_order: Vec<usize> = (0..n).rev().collect();
    let forward_out = run_direction(&vars.forward, &forward_order)?;
    let backward_out = run_direction(&vars.backward, &backward_order)?;

    let mut out_rows = Vec::with_capacity(n);
    for t in 0..n {
        out_rows.push(tape.concat(&[backward_out[t], forward_out[t]], 1)?);
    }
    tape.concat(&out_rows, 0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{grad_check, GradCheckOptions};
    use crate::rng;

    fn lease_bilstm<'a>(tape: &Tape, params: &BiLstmParams) -> (Vec<Var>, BiLstmVars) {
        let mut blocks = Vec::new();
        params.visit("enc", &mut blocks);
        let leaves: Vec<Var> = blocks
            .iter()
            .map(|(_, t)| tape.leaf((*t).clone()))
            .collect();
        let mut cursor = VarCursor::new(&leaves);
        let vars = params.vars_from(tape, &mut cursor).unwrap();
        assert!(cursor.finished());
        (leaves, vars)
    }

    #[test]
    fn zero_cell_keeps_zero_state() {
        let tape = Tape::new();
        let params = LstmCellParams::zeros(3, 4);
        let mut blocks = Vec::new();
        params.visit("cell", &mut blocks);
        let leaves: Vec<Var> = blocks
            .iter()
            .map(|(_, t)| tape.leaf((*t).clone()))
            .collect();
        let mut cursor = VarCursor::new(&leaves);
        let cell = params.vars_from(&tape, &mut cursor).unwrap();
        let x = tape.constant(Tensor::zeros(&[1, 3]));
        let h0 = tape.constant(Tensor::zeros(&[1, 4]));
        let c0 = tape.constant(Tensor::zeros(&[1, 4]));
        let (h, c) = lstm_cell_step(&tape, &cell, x, h0, c0).unwrap();
        assert_eq!(tape.value(h).data(), &[0.0; 4]);
        assert_eq!(tape.value(c).data(), &[0.0; 4]);
    }

    #[test]
    fn cell_state_growth_is_bounded_by_one_per_step() {
        let mut r = rng::seeded(31);
        let params = LstmCellParams::init(5, 6, &mut r);
        let tape = Tape::new();
        let mut blocks = Vec::new();
        params.visit("cell", &mut blocks);
        let leaves: Vec<Var> = blocks
            .iter()
            .map(|(_, t)| tape.leaf((*t).clone()))
            .collect();
        let mut cursor = VarCursor::new(&leaves);
        let cell = params.vars_from(&tape, &mut cursor).unwrap();

        let mut h = tape.constant(Tensor::zeros(&[1, 6]));
        let mut c = tape.constant(Tensor::zeros(&[1, 6]));
        let mut prev = Tensor::zeros(&[1, 6]);
        for step in 0..1000 {
            let x = tape.constant(rng::uniform_tensor(&mut r, &[1, 5], 50.0));
            let (h2, c2) = lstm_cell_step(&tape, &cell, x, h, c).unwrap();
            h = h2;
            c = c2;
            let now = tape.value(c);
            for (cur, old) in now.iter().zip(prev.iter()) {
                assert!(cur.is_finite());
                assert!(
                    cur.abs() <= old.abs() + 1.0 + 1e-12,
                    "step {step}: |c| jumped from {old} to {cur}"
                );
            }
            prev = now;
        }
    }

    #[test]
    fn one_step_cell_gradient_passes_on_all_twelve_blocks() {
        let mut r = rng::seeded(8);
        let params = LstmCellParams::init(3, 4, &mut r);
        let mut inputs: Vec<(String, Tensor)> = Vec::new();
        {
            let mut blocks = Vec::new();
            params.visit("cell", &mut blocks);
            for (name, t) in blocks {
                inputs.push((name, t.clone()));
            }
        }
        inputs.push(("x".into(), rng::uniform_tensor(&mut r, &[1, 3], 2.0)));
        inputs.push(("h_prev".into(), rng::uniform_tensor(&mut r, &[1, 4], 1.0)));
        inputs.push(("c_prev".into(), rng::uniform_tensor(&mut r, &[1, 4], 1.0)));
        let named: Vec<(&str, Tensor)> = inputs
            .iter()
            .map(|(n, t)| (n.as_str(), t.clone()))
            .collect();
        let report = grad_check(
            |tape, vars| {
                let mut cursor = VarCursor::new(&vars[..12]);
                let cell = params.vars_from(tape, &mut cursor)?;
                let (h, c) = lstm_cell_step(tape, &cell, vars[12], vars[13], vars[14])?;
                tape.sum(tape.add(tape.mul(h, h)?, c)?)
            },
            &named,
            &GradCheckOptions::default(),
        )
        .unwrap();
        assert!(report.pass(), "max rel err {}", report.max_rel_err());
        assert_eq!(report.inputs.len(), 15);
    }

    #[test]
    fn single_segment_sequence_has_double_hidden_width() {
        let mut r = rng::seeded(12);
        let params = BiLstmParams::init(3 + 4, 4, &mut r);
        let tape = Tape::new();
        let (_, vars) = lease_bilstm(&tape, &params);
        let seq = tape.constant(rng::uniform_tensor(&mut r, &[1, 3], 1.0));
        let out = bilstm_rerepresent(&tape, &vars, seq, true).unwrap();
        assert_eq!(tape.shape(out), alloc::vec![1, 8]);
    }

    #[test]
    fn audio_path_dimensions_match_the_grid() {
        // 10 segments of 128-wide audio, hidden 256 per direction -> 10 x 512.
        let mut r = rng::seeded(13);
        let params = BiLstmParams::init(128 + 256, 256, &mut r);
        let tape = Tape::new();
        let (_, vars) = lease_bilstm(&tape, &params);
        let seq = tape.constant(rng::uniform_tensor(&mut r, &[10, 128], 1.0));
        let out = bilstm_rerepresent(&tape, &vars, seq, true).unwrap();
        assert_eq!(tape.shape(out), alloc::vec![10, 512]);
    }

    #[test]
    fn reversing_input_and_swapping_directions_mirrors_output() {
        let mut r = rng::seeded(14);
        let n = 6;
        let hidden = 4;
        let params = BiLstmParams::init(3 + hidden, hidden, &mut r);
        let swapped = BiLstmParams {
            forward_cell: params.backward_cell.clone(),
            backward_cell: params.forward_cell.clone(),
        };
        let seq = rng::uniform_tensor(&mut r, &[n, 3], 1.5);
        let mut rev_data = Vec::new();
        for t in (0..n).rev() {
            rev_data.extend_from_slice(&seq.data()[t * 3..(t + 1) * 3]);
        }
        let rev_seq = Tensor::new(alloc::vec![n, 3], rev_data).unwrap();

        let tape = Tape::new();
        let (_, vars) = lease_bilstm(&tape, &params);
        let out = tape.value(bilstm_rerepresent(&tape, &vars, tape.constant(seq), true).unwrap());
        let (_, svars) = lease_bilstm(&tape, &swapped);
        let rev_out =
            tape.value(bilstm_rerepresent(&tape, &svars, tape.constant(rev_seq), true).unwrap());

        // Row t of the original equals row n-1-t of the swapped run with the
        // direction halves exchanged.
        for t in 0..n {
            for j in 0..hidden {
                assert_eq!(
                    out.get2(t, j).to_bits(),
                    rev_out.get2(n - 1 - t, hidden + j).to_bits()
                );
                assert_eq!(
                    out.get2(t, hidden + j).to_bits(),
                    rev_out.get2(n - 1 - t, j).to_bits()
                );
            }
        }
    }

    /// Test-local plain Bi-LSTM, written directly against std float math so
    /// it shares nothing with the tape path.
    fn reference_bilstm(params: &BiLstmParams, seq: &Tensor) -> Vec<Vec<f64>> {
        let (n, raw) = (seq.shape()[0], seq.shape()[1]);
        let hidden = params.hidden();
        let run = |cell: &LstmCellParams, order: &mut dyn Iterator<Item = usize>| {
            let mut h = vec![0.0; hidden];
            let mut c = vec![0.0; hidden];
            let mut out = vec![vec![0.0; hidden]; n];
            for t in order {
                let x = &seq.data()[t * raw..(t + 1) * raw];
                let mut gates = [
                    vec![0.0; hidden],
                    vec![0.0; hidden],
                    vec![0.0; hidden],
                    vec![0.0; hidden],
                ];
                for g in 0..4 {
                    for u in 0..hidden {
                        let mut acc = cell.biases[g].data()[u];
                        for (i, &xi) in x.iter().enumerate() {
                            acc += cell.input_weights[g].get2(u, i) * xi;
                        }
                        for (j, &hj) in h.iter().enumerate() {
                            acc += cell.hidden_weights[g].get2(u, j) * hj;
                        }
                        gates[g][u] = acc;
                    }
                }
                let mut h_new = vec![0.0; hidden];
                for u in 0..hidden {
                    let i_g = 1.0 / (1.0 + (-gates[0][u]).exp());
                    let f_g = 1.0 / (1.0 + (-gates[1][u]).exp());
                    let o_g = 1.0 / (1.0 + (-gates[2][u]).exp());
                    let cand = gates[3][u].tanh();
                    c[u] = f_g * c[u] + i_g * cand;
                    h_new[u] = o_g * c[u].tanh();
                }
                h = h_new;
                out[t] = h.clone();
            }
            out
        };
        let fwd = run(&params.forward_cell, &mut (0..n));
        let bwd = run(&params.backward_cell, &mut (0..n).rev());
        (0..n)
            .map(|t| {
                let mut row = bwd[t].clone();
                row.extend_from_slice(&fwd[t]);
                row
            })
            .collect()
    }

    #[test]
    fn residual_off_reduces_to_a_plain_bilstm() {
        let mut r = rng::seeded(15);
        let params = BiLstmParams::init(3, 4, &mut r);
        let seq = rng::uniform_tensor(&mut r, &[5, 3], 1.0);
        let tape = Tape::new();
        let (_, vars) = lease_bilstm(&tape, &params);
        let out = tape
            .value(bilstm_rerepresent(&tape, &vars, tape.constant(seq.clone()), false).unwrap());
        let expected = reference_bilstm(&params, &seq);
        for t in 0..5 {
            for j in 0..8 {
                assert!(
                    (out.get2(t, j) - expected[t][j]).abs() < 1e-12,
                    "({t},{j}): {} vs {}",
                    out.get2(t, j),
                    expected[t][j]
                );
            }
        }
    }

    #[test]
    fn full_sequence_gradient_passes_on_a_toy_config() {
        let mut r = rng::seeded(16);
        let params = BiLstmParams::init(3 + 2, 2, &mut r);
        let mut inputs: Vec<(String, Tensor)> = Vec::new();
        {
            let mut blocks = Vec::new();
            params.visit("enc", &mut blocks);
            for (name, t) in blocks {
                inputs.push((name, t.clone()));
            }
        }
        inputs.push(("seq".into(), rng::uniform_tensor(&mut r, &[4, 3], 1.0)));
        let named: Vec<(&str, Tensor)> = inputs
            .iter()
            .map(|(n, t)| (n.as_str(), t.clone()))
            .collect();
        let report = grad_check(
            |tape, vars| {
                let mut cursor = VarCursor::new(&vars[..24]);
                let bl = params.vars_from(tape, &mut cursor)?;
                let out = bilstm_rerepresent(tape, &bl, vars[24], true)?;
                tape.sum(tape.mul(out, out)?)
            },
            &named,
            &GradCheckOptions::default(),
        )
        .unwrap();
        assert!(report.pass(), "max rel err {}", report.max_rel_err());
    }

    #[test]
    fn empty_sequences_cannot_be_represented() {
        // Zero-extent tensors are rejected at construction, which is where
        // the N = 0 contract error surfaces.
        let err = Tensor::new(alloc::vec![0, 128], alloc::vec![]).unwrap_err();
        assert!(matches!(err, Error::Contract { .. }));
    }
}

//! Early fusion: reduce each segment's 7x7 visual grid to one channel vector.
//!
//! The audio-guided variant projects the segment's audio feature into channel
//! space, scores every spatial position by a scaled dot product, and pools
//! the grid under the softmax weights. Average and max pooling are the
//! ablation baselines.

use crate::error::Result;
use crate::rng;
use crate::tape::{Tape, Var, VarCursor};
use crate::tensor::Tensor;
use crate::{RAW_AUDIO_DIM, VISUAL_CHANNELS, VISUAL_POSITIONS};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use rand_core::RngCore;

#[derive(Debug, Clone, PartialEq)]
pub struct EarlyFusionParams {
    /// Maps a 128-wide audio feature into 512-wide channel space.
    pub audio_proj: Tensor,
}

impl EarlyFusionParams {
    pub fn init<R: RngCore>(rng: &mut R) -> Self {
        let bound = 1.0 / crate::fmath::sqrt(RAW_AUDIO_DIM as f64);
        EarlyFusionParams {
            audio_proj: rng::uniform_tensor(rng, &[VISUAL_CHANNELS, RAW_AUDIO_DIM], bound),
        }
    }

    pub fn zeros() -> Self {
        EarlyFusionParams {
            audio_proj: Tensor::zeros(&[VISUAL_CHANNELS, RAW_AUDIO_DIM]),
        }
    }

    pub fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        out.push((format!("{prefix}.audio_proj"), &self.audio_proj));
    }

    pub fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        out.push((format!("{prefix}.audio_proj"), &mut self.audio_proj));
    }

    pub fn vars_from(&self, _tape: &Tape, cursor: &mut VarCursor<'_>) -> Result<EarlyFusionVars> {
        Ok(EarlyFusionVars {
            audio_proj: cursor.take()?,
        })
    }
}

pub struct EarlyFusionVars {
    pub audio_proj: Var,
}

/// Scaled dot-product attention of one audio segment over the 49 positions of
/// its visual grid.
///
/// `q = proj * a`, `score_i = (grid_i . q) / sqrt(512)`,
/// `weights = softmax(scores)`, `pooled = sum_i weights_i * grid_i`.
///
/// Returns the pooled `1 x 512` vector and the `49 x 1` weight column (kept
/// for heatmap export).
pub fn audio_guided_pool(tape: &Tape, proj: Var, audio: Var, grid: Var) -> Result<(Var, Var)> {
    let query = tape.matmul(proj, tape.transpose(audio)?)?;
    let scores = tape.scale(
        tape.matmul(grid, query)?,
        1.0 / crate::fmath::sqrt(VISUAL_CHANNELS as f64),
    )?;
    let weights = tape.softmax(scores, 0)?;
    let pooled = tape.matmul(tape.transpose(weights)?, grid)?;
    Ok((pooled, weights))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolKind {
    Average,
    Max,
}

/// Per-channel mean or max over the 49 positions, as a `1 x 512` row.
pub fn baseline_pool(tape: &Tape, grid: Var, kind: PoolKind) -> Result<Var> {
    match kind {
        PoolKind::Average => {
            let uniform = tape.constant(Tensor::full(
                &[1, VISUAL_POSITIONS],
                1.0 / VISUAL_POSITIONS as f64,
            ));
            tape.matmul(uniform, grid)
        }
        PoolKind::Max => tape.col_max(grid),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{grad_check, GradCheckOptions};
    use crate::rng;
    use alloc::vec;

    fn grid_from_rows(rows: &[Vec<f64>]) -> Tensor {
        let mut data = Vec::new();
        for row in rows {
            data.extend_from_slice(row);
        }
        Tensor::new(vec![rows.len(), rows[0].len()], data).unwrap()
    }

    #[test]
    fn zero_projection_pools_the_spatial_mean() {
        let mut r = rng::seeded(20);
        let tape = Tape::new();
        let proj = tape.leaf(Tensor::zeros(&[VISUAL_CHANNELS, RAW_AUDIO_DIM]));
        let audio = tape.constant(rng::uniform_tensor(&mut r, &[1, RAW_AUDIO_DIM], 1.0));
        let grid_t = rng::uniform_tensor(&mut r, &[VISUAL_POSITIONS, VISUAL_CHANNELS], 1.0);
        let grid = tape.constant(grid_t.clone());
        let (pooled, weights) = audio_guided_pool(&tape, proj, audio, grid).unwrap();

        let w = tape.value(weights);
        assert_eq!(w.shape(), &[VISUAL_POSITIONS, 1]);
        for &wi in w.iter() {
            assert!((wi - 1.0 / 49.0).abs() < 1e-15);
        }
        let p = tape.value(pooled);
        for c in 0..VISUAL_CHANNELS {
            let mean: f64 = (0..VISUAL_POSITIONS)
                .map(|i| grid_t.get2(i, c))
                .sum::<f64>()
                / 49.0;
            assert!((p.get2(0, c) - mean).abs() < 1e-12);
        }
    }

    #[test]
    fn weights_are_a_distribution() {
        let mut r = rng::seeded(21);
        let tape = Tape::new();
        let proj = tape.leaf(EarlyFusionParams::init(&mut r).audio_proj);
        let audio = tape.constant(rng::uniform_tensor(&mut r, &[1, RAW_AUDIO_DIM], 1.0));
        let grid = tape.constant(rng::uniform_tensor(
            &mut r,
            &[VISUAL_POSITIONS, VISUAL_CHANNELS],
            1.0,
        ));
        let (_, weights) = audio_guided_pool(&tape, proj, audio, grid).unwrap();
        let w = tape.value(weights);
        assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        assert!(w.iter().all(|&v| v > 0.0));
    }

    #[test]
    fn dominant_position_takes_nearly_all_weight() {
        // Rows aligned with the query direction; one position scaled x100.
        let mut r = rng::seeded(22);
        let tape = Tape::new();
        let proj_t = rng::uniform_tensor(&mut r, &[VISUAL_CHANNELS, RAW_AUDIO_DIM], 0.2);
        let audio_t = rng::uniform_tensor(&mut r, &[1, RAW_AUDIO_DIM], 1.0);

        // Query direction computed in the test, independently of the tape.
        let mut q = vec![0.0; VISUAL_CHANNELS];
        for c in 0..VISUAL_CHANNELS {
            for i in 0..RAW_AUDIO_DIM {
                q[c] += proj_t.get2(c, i) * audio_t.get2(0, i);
            }
        }
        let q_norm: f64 = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        let unit: Vec<f64> = q.iter().map(|v| v / q_norm).collect();
        let mut rows: Vec<Vec<f64>> = (0..VISUAL_POSITIONS).map(|_| unit.clone()).collect();
        rows[17] = unit.iter().map(|v| v * 100.0).collect();
        let grid_t = grid_from_rows(&rows);

        // Hand softmax over the constructed scores.
        let scale = 1.0 / (VISUAL_CHANNELS as f64).sqrt();
        let scores: Vec<f64> = rows
            .iter()
            .map(|row| row.iter().zip(&q).map(|(a, b)| a * b).sum::<f64>() * scale)
            .collect();
        let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
        let total: f64 = exps.iter().sum();

        let proj = tape.leaf(proj_t);
        let audio = tape.constant(audio_t);
        let grid = tape.constant(grid_t);
        let (_, weights) = audio_guided_pool(&tape, proj, audio, grid).unwrap();
        let w = tape.value(weights);
        assert!(w.data()[17] > 0.99, "dominant weight {}", w.data()[17]);
        for i in 0..VISUAL_POSITIONS {
            assert!((w.data()[i] - exps[i] / total).abs() < 1e-9);
        }
    }

    #[test]
    fn constant_grid_pools_to_the_constant() {
        let tape = Tape::new();
        let grid = tape.constant(Tensor::full(&[VISUAL_POSITIONS, VISUAL_CHANNELS], 3.25));
        for kind in [PoolKind::Average, PoolKind::Max] {
            let pooled = tape.value(baseline_pool(&tape, grid, kind).unwrap());
            assert!(pooled.iter().all(|&v| (v - 3.25).abs() < 1e-12));
        }
    }

    #[test]
    fn average_of_alternating_rows_is_the_midpoint() {
        let rows: Vec<Vec<f64>> = (0..VISUAL_POSITIONS)
            .map(|i| vec![if i % 2 == 0 { 0.0 } else { 2.0 }; VISUAL_CHANNELS])
            .collect();
        // 25 zero rows and 24 two rows.
        let expected = 48.0 / 49.0;
        let tape = Tape::new();
        let grid = tape.constant(grid_from_rows(&rows));
        let pooled = tape.value(baseline_pool(&tape, grid, PoolKind::Average).unwrap());
        assert!(pooled.iter().all(|&v| (v - expected).abs() < 1e-12));
    }

    #[test]
    fn max_dominates_average_elementwise() {
        let mut r = rng::seeded(23);
        for _ in 0..10 {
            let tape = Tape::new();
            let grid = tape.constant(rng::uniform_tensor(
                &mut r,
                &[VISUAL_POSITIONS, VISUAL_CHANNELS],
                2.0,
            ));
            let avg = tape.value(baseline_pool(&tape, grid, PoolKind::Average).unwrap());
            let max = tape.value(baseline_pool(&tape, grid, PoolKind::Max).unwrap());
            for (m, a) in max.iter().zip(avg.iter()) {
                assert!(m >= a);
            }
        }
    }

    #[test]
    fn pooled_stays_in_the_convex_hull_per_channel() {
        let mut r = rng::seeded(24);
        let tape = Tape::new();
        let proj = tape.leaf(EarlyFusionParams::init(&mut r).audio_proj);
        let audio = tape.constant(rng::uniform_tensor(&mut r, &[1, RAW_AUDIO_DIM], 1.0));
        let grid_t = rng::uniform_tensor(&mut r, &[VISUAL_POSITIONS, VISUAL_CHANNELS], 1.0);
        let grid = tape.constant(grid_t.clone());
        let (pooled, _) = audio_guided_pool(&tape, proj, audio, grid).unwrap();
        let avg = baseline_pool(&tape, grid, PoolKind::Average).unwrap();
        for out in [tape.value(pooled), tape.value(avg)] {
            for c in 0..VISUAL_CHANNELS {
                let column: Vec<f64> = (0..VISUAL_POSITIONS).map(|i| grid_t.get2(i, c)).collect();
                let lo = column.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = column.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                assert!(out.get2(0, c) >= lo - 1e-12 && out.get2(0, c) <= hi + 1e-12);
            }
        }
    }

    #[test]
    fn permuting_positions_permutes_weights_and_fixes_pooled() {
        let mut r = rng::seeded(25);
        let proj_t = EarlyFusionParams::init(&mut r).audio_proj;
        let audio_t = rng::uniform_tensor(&mut r, &[1, RAW_AUDIO_DIM], 1.0);
        let grid_t = rng::uniform_tensor(&mut r, &[VISUAL_POSITIONS, VISUAL_CHANNELS], 1.0);

        // Deterministic permutation: rotate by 13.
        let perm: Vec<usize> = (0..VISUAL_POSITIONS)
            .map(|i| (i + 13) % VISUAL_POSITIONS)
            .collect();
        let mut permuted = Tensor::zeros(&[VISUAL_POSITIONS, VISUAL_CHANNELS]);
        for (dst, &src) in perm.iter().enumerate() {
            for c in 0..VISUAL_CHANNELS {
                permuted.set2(dst, c, grid_t.get2(src, c));
            }
        }

        let tape = Tape::new();
        let proj = tape.leaf(proj_t);
        let audio = tape.constant(audio_t);
        let (pooled_a, weights_a) =
            audio_guided_pool(&tape, proj, audio, tape.constant(grid_t)).unwrap();
        let (pooled_b, weights_b) =
            audio_guided_pool(&tape, proj, audio, tape.constant(permuted)).unwrap();

        let (wa, wb) = (tape.value(weights_a), tape.value(weights_b));
        for (dst, &src) in perm.iter().enumerate() {
            assert!((wb.data()[dst] - wa.data()[src]).abs() < 1e-14);
        }
        let (pa, pb) = (tape.value(pooled_a), tape.value(pooled_b));
        for (x, y) in pa.iter().zip(pb.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn audio_guided_gradients_pass_on_all_three_inputs() {
        let mut r = rng::seeded(26);
        let proj = EarlyFusionParams::init(&mut r).audio_proj;
        let audio = rng::uniform_tensor(&mut r, &[1, RAW_AUDIO_DIM], 1.0);
        let grid = rng::uniform_tensor(&mut r, &[VISUAL_POSITIONS, VISUAL_CHANNELS], 1.0);
        let opts = GradCheckOptions {
            max_checks_per_input: Some(40),
            seed: 5,
            ..GradCheckOptions::default()
        };
        let report = grad_check(
            |tape, vars| {
                let (pooled, weights) = audio_guided_pool(tape, vars[0], vars[1], vars[2])?;
                let a = tape.sum(tape.mul(pooled, pooled)?)?;
                let b = tape.sum(tape.mul(weights, weights)?)?;
                tape.add(a, b)
            },
            &[("audio_proj", proj), ("audio", audio), ("grid", grid)],
            &opts,
        )
        .unwrap();
        assert!(report.pass(), "max rel err {}", report.max_rel_err());
    }
}

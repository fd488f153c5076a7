//! Structural invariants checked over randomized inputs.

use ave_core::fusion::{baseline_pool, PoolKind};
use ave_core::jca::{
    affinity, jca_layer, CoAttentionMode, FusionCombine, FusionStrategy, JcaLayerParams,
};
use ave_core::rng;
use ave_core::tape::{Tape, Var, VarCursor};
use ave_core::tensor::Tensor;
use proptest::prelude::*;

fn tensor_strategy(rows: usize, cols: usize) -> impl Strategy<Value = Tensor> {
    proptest::collection::vec(-2.0f64..2.0, rows * cols)
        .prop_map(move |data| Tensor::new(vec![rows, cols], data).unwrap())
}

fn dims() -> impl Strategy<Value = (usize, usize)> {
    (1usize..6, 1usize..6)
}

proptest! {
    #[test]
    fn split_concat_is_the_bitwise_identity(
        (rows, cols) in dims(),
        pieces in 1usize..4,
        axis in 0usize..2,
        seed in 0u64..1000,
    ) {
        let mut r = rng::seeded(seed);
        let tape = Tape::new();
        let parts: Vec<Tensor> = (0..pieces)
            .map(|_| {
                let shape = if axis == 0 { [rows, cols] } else { [cols, rows] };
                rng::uniform_tensor(&mut r, &shape, 2.0)
            })
            .collect();
        let vars: Vec<Var> = parts.iter().map(|t| tape.leaf(t.clone())).collect();
        let cat = tape.concat(&vars, axis).unwrap();
        let extents: Vec<usize> = parts.iter().map(|t| t.shape()[axis]).collect();
        let back = tape.split(cat, axis, &extents).unwrap();
        for (orig, piece) in parts.iter().zip(back) {
            let got = tape.value(piece);
            prop_assert_eq!(orig.shape(), got.shape());
            for (a, b) in orig.iter().zip(got.iter()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn softmax_lanes_are_distributions(t in dims().prop_flat_map(|(r, c)| tensor_strategy(r, c)), axis in 0usize..2) {
        let tape = Tape::new();
        let x = tape.leaf(t.clone());
        let y = tape.value(tape.softmax(x, axis).unwrap());
        let (rows, cols) = (t.shape()[0], t.shape()[1]);
        let lanes = if axis == 1 { rows } else { cols };
        let lane_len = if axis == 1 { cols } else { rows };
        for lane in 0..lanes {
            let sum: f64 = if axis == 1 {
                (0..cols).map(|c| y.get2(lane, c)).sum()
            } else {
                (0..rows).map(|r| y.get2(r, lane)).sum()
            };
            prop_assert!((sum - 1.0).abs() <= 1e-12);
        }
        for &v in y.iter() {
            prop_assert!(v > 0.0);
            // A singleton lane is exactly 1 by definition; otherwise the
            // [-2, 2] domain keeps every entry strictly inside (0, 1).
            if lane_len > 1 {
                prop_assert!(v < 1.0);
            } else {
                prop_assert!(v == 1.0);
            }
        }
    }

    #[test]
    fn activations_respect_their_ranges(t in dims().prop_flat_map(|(r, c)| tensor_strategy(r, c))) {
        let tape = Tape::new();
        let x = tape.leaf(t);
        for v in tape.value(tape.tanh(x).unwrap()).iter() {
            prop_assert!((-1.0..=1.0).contains(v));
        }
        for v in tape.value(tape.relu(x).unwrap()).iter() {
            prop_assert!(*v >= 0.0);
        }
        for v in tape.value(tape.sigmoid(x).unwrap()).iter() {
            prop_assert!(*v > 0.0 && *v < 1.0);
        }
    }

    #[test]
    fn jca_layer_preserves_shapes_and_bounds(
        n in 1usize..5,
        k in 1usize..5,
        half_d in 1usize..4,
        seed in 0u64..1000,
    ) {
        let d = half_d * 2;
        let mut r = rng::seeded(seed);
        let strategy = FusionStrategy::new(FusionCombine::Concatenation, false);
        let layer = JcaLayerParams::init(n, k, d, d, strategy, CoAttentionMode::Joint, &mut r);
        let tape = Tape::new();
        let mut blocks = Vec::new();
        layer.visit("jca", &mut blocks);
        let leaves: Vec<Var> = blocks.iter().map(|(_, t)| tape.leaf((*t).clone())).collect();
        let mut cursor = VarCursor::new(&leaves);
        let vars = layer.vars_from(&tape, &mut cursor).unwrap();

        let a = tape.constant(rng::uniform_tensor(&mut r, &[n, d], 2.0));
        let v = tape.constant(rng::uniform_tensor(&mut r, &[n, d], 2.0));
        let j = tape.concat(&[a, v], 1).unwrap();
        let c_a = affinity(&tape, a, vars.w_ja, j, 2 * d).unwrap();
        for e in tape.value(c_a).iter() {
            prop_assert!((-1.0..=1.0).contains(e));
        }
        let (a_out, v_out) = jca_layer(&tape, &vars, strategy, CoAttentionMode::Joint, a, v).unwrap();
        prop_assert_eq!(tape.shape(a_out), vec![n, d]);
        prop_assert_eq!(tape.shape(v_out), vec![n, d]);
    }

    #[test]
    fn max_pool_dominates_average_pool(seed in 0u64..2000) {
        let mut r = rng::seeded(seed);
        let tape = Tape::new();
        let grid = tape.constant(rng::uniform_tensor(
            &mut r,
            &[ave_core::VISUAL_POSITIONS, ave_core::VISUAL_CHANNELS],
            2.0,
        ));
        let avg = tape.value(baseline_pool(&tape, grid, PoolKind::Average).unwrap());
        let max = tape.value(baseline_pool(&tape, grid, PoolKind::Max).unwrap());
        for (m, a) in max.iter().zip(avg.iter()) {
            prop_assert!(m >= a);
        }
    }
}

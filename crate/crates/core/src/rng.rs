//! Deterministic random helpers on top of ChaCha8.
//!
//! Weight initialization, gradient-check sampling and the data tooling in the
//! companion crate all draw from seeded ChaCha streams so that every run is
//! bitwise reproducible.

use crate::tensor::Tensor;
use alloc::vec::Vec;
use rand_core::{RngCore, SeedableRng};

pub use rand_chacha::ChaCha8Rng;

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform in `[0, 1)` with 53 bits of precision.
pub fn unit_f64<R: RngCore>(rng: &mut R) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

pub fn uniform<R: RngCore>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * unit_f64(rng)
}

/// Tensor with entries uniform in `[-bound, bound]`.
pub fn uniform_tensor<R: RngCore>(rng: &mut R, shape: &[usize], bound: f64) -> Tensor {
    let numel: usize = shape.iter().product();
    let data: Vec<f64> = (0..numel).map(|_| uniform(rng, -bound, bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape/data constructed consistently")
}

/// `count` distinct indices out of `0..n` (ascending), via a partial
/// Fisher-Yates shuffle.
pub fn sample_indices<R: RngCore>(rng: &mut R, n: usize, count: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    let count = count.min(n);
    for i in 0..count {
        let j = i + (rng.next_u64() as usize) % (n - i);
        idx.swap(i, j);
    }
    idx.truncate(count);
    idx.sort_unstable();
    idx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_range_and_determinism() {
        let mut a = seeded(9);
        let mut b = seeded(9);
        for _ in 0..1000 {
            let x = unit_f64(&mut a);
            assert!((0.0..1.0).contains(&x));
            assert_eq!(x.to_bits(), unit_f64(&mut b).to_bits());
        }
    }

    #[test]
    fn sample_indices_distinct_and_bounded() {
        let mut rng = seeded(3);
        let idx = sample_indices(&mut rng, 100, 17);
        assert_eq!(idx.len(), 17);
        for w in idx.windows(2) {
            assert!(w[0] < w[1]);
        }
        assert!(idx.iter().all(|&i| i < 100));
    }

    #[test]
    fn sample_indices_caps_at_n() {
        let mut rng = seeded(3);
        let idx = sample_indices(&mut rng, 5, 50);
        assert_eq!(idx, alloc::vec![0, 1, 2, 3, 4]);
    }
}

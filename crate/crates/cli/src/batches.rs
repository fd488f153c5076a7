//! Deterministic epoch batching: a seeded shuffle chunked into batches that
//! cover every sequence exactly once.

use crate::error::CliError;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn batch_indices(
    count: usize,
    batch_size: usize,
    shuffle_seed: u64,
) -> Result<Vec<Vec<usize>>, CliError> {
    if count == 0 {
        return Err(CliError::config("cannot batch an empty dataset"));
    }
    if batch_size == 0 {
        return Err(CliError::config("batch size must be positive"));
    }
    let mut indices: Vec<usize> = (0..count).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(shuffle_seed);
    indices.shuffle(&mut rng);
    Ok(indices.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

/// Per-epoch shuffle seed derived from the run seed.
pub fn epoch_seed(run_seed: u64, epoch: usize) -> u64 {
    run_seed ^ (epoch as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

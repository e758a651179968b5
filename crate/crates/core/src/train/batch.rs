//! Mini-batch ordering policies.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchPolicy {
    RandomShuffle,
    LengthGrouped,
}

/// Examples per megabatch, as a multiple of the batch size, for
/// length-grouped ordering.
pub const MEGABATCH_MULT: usize = 50;

/// Splits example indices `0..lengths.len()` into batches of
/// `per_device_batch * device_count`. Every index appears exactly once.
pub fn make_batches(
    lengths: &[usize],
    policy: BatchPolicy,
    per_device_batch: usize,
    device_count: usize,
    seed: u64,
) -> Vec<Vec<usize>> {
    let bs = (per_device_batch * device_count).max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..lengths.len()).collect();
    order.shuffle(&mut rng);
    if policy == BatchPolicy::LengthGrouped {
        for mega in order.chunks_mut(MEGABATCH_MULT * bs) {
            // stable sort keeps the shuffled order among equal lengths
            mega.sort_by(|&a, &b| lengths[b].cmp(&lengths[a]));
        }
    }
    order.chunks(bs).map(<[usize]>::to_vec).collect()
}

/// Largest `max - min` length difference inside any batch.
pub fn max_length_spread(lengths: &[usize], batches: &[Vec<usize>]) -> usize {
    batches
        .iter()
        .map(|b| {
            let it = b.iter().map(|&i| lengths[i]);
            it.clone().max().unwrap_or(0) - it.min().unwrap_or(0)
        })
        .max()
        .unwrap_or(0)
}

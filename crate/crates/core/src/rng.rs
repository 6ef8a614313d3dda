//! Seeded randomness shared by every stochastic routine in the crate.

use alloc::vec::Vec;
use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub type Rng = ChaCha8Rng;

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent stream for sub-task `index` of a run seeded with `seed`.
///
/// Used so trials and episodes can be evaluated in any order (or in
/// parallel) and still reproduce the same numbers.
pub fn stream(seed: u64, index: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index.wrapping_add(1));
    rng
}

pub fn normal(rng: &mut Rng) -> f64 {
    rng.sample(StandardNormal)
}

pub fn normal_vec(rng: &mut Rng, len: usize, scale: f64) -> Vec<f64> {
    (0..len).map(|_| scale * normal(rng)).collect()
}

pub fn uniform(rng: &mut Rng, lo: f64, hi: f64) -> f64 {
    rng.random_range(lo..hi)
}

/// `amount` distinct indices from `0..len`, in sampled order.
pub fn sample_indices(rng: &mut Rng, len: usize, amount: usize) -> Vec<usize> {
    rand::seq::index::sample(rng, len, amount).into_vec()
}

pub fn shuffle<T>(rng: &mut Rng, items: &mut [T]) {
    use rand::seq::SliceRandom;
    items.shuffle(rng);
}

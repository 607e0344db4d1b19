//! Seeded random streams. Every stochastic routine takes one of these so runs
//! are reproducible from a single `u64`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derives an independent stream for a sub-task (a facet, an epoch, ...).
pub fn derived(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream.wrapping_add(1));
    rng
}

/// A child seed for stream `stream` of `seed`, for APIs that take a `u64`.
pub fn sub_seed(seed: u64, stream: u64) -> u64 {
    use rand::RngCore;
    derived(seed, stream).next_u64()
}

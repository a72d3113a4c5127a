//! Deterministic RNG streams. All randomness in the crate flows from a
//! single `u64` seed; independent streams are derived by mixing the seed
//! with structural tags so that parallel schedules cannot change results.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// splitmix64 finalizer; good avalanche for combining tags into a seed.
fn mix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

/// Derive an independent stream from a base seed and up to three tags
/// (e.g. skill index, iteration, purpose).
pub fn stream(seed: u64, tags: &[u64]) -> ChaCha8Rng {
    let mut s = mix(seed);
    for &t in tags {
        s = mix(s ^ t);
    }
    ChaCha8Rng::seed_from_u64(s)
}

pub fn single(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(seed))
}

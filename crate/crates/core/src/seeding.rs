//! Deterministic RNG stream derivation.
//!
//! Every random decision in the toolkit draws from a ChaCha stream whose seed
//! is derived from the user seed plus a fixed tag path, so that independent
//! consumers (clients, rounds, evaluation) never share state.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive an independent stream for `seed` along `path`.
pub fn stream(seed: u64, path: &[u64]) -> StreamRng {
    let mut state = splitmix64(seed);
    for &tag in path {
        state = splitmix64(state ^ splitmix64(tag.wrapping_add(0xA5A5_A5A5)));
    }
    StreamRng::seed_from_u64(state)
}

/// Derive a child seed (for APIs that take a plain `u64` seed).
pub fn derive(seed: u64, path: &[u64]) -> u64 {
    path.iter().fold(splitmix64(seed ^ 0x5EED), |s, &tag| {
        splitmix64(s ^ splitmix64(tag))
    })
}

// Stream tags.
pub const TAG_GENERATE: u64 = 1;
pub const TAG_SPLIT: u64 = 2;
pub const TAG_KMEANS: u64 = 3;
pub const TAG_DIRICHLET: u64 = 4;
pub const TAG_BASE_MODEL: u64 = 5;
pub const TAG_ADAPTER_INIT: u64 = 6;
pub const TAG_CLIENT: u64 = 7;
pub const TAG_SAMPLING: u64 = 8;

//! Seeded random sources.
//!
//! Every random stream in the crate is a ChaCha8 generator keyed by a 64-bit
//! seed, optionally mixed with a stream index (utterance number, step, ...)
//! so that independent items can be generated in any order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derives an independent stream for item `index` under `seed`.
pub fn derived(seed: u64, index: u64) -> Rng {
    seeded(mix(seed, index))
}

/// splitmix64 finalizer over the pair.
pub fn mix(seed: u64, index: u64) -> u64 {
    let mut z = seed
        ^ index
            .wrapping_add(0x9e37_79b9_7f4a_7c15)
            .wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

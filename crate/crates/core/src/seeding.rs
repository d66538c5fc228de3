//! Seed derivation. Every random stream in the crate comes from one 64-bit
//! global seed: `derive_seed(global, parts)` folds each part into a SplitMix64
//! state, so a stream is a pure function of `(global, N, p, index, ...)`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive_seed(global: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(splitmix64(global), |acc, &part| splitmix64(acc ^ splitmix64(part)))
}

pub fn rng_from(global: u64, parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(global, parts))
}

//! Seed-stream derivation.
//!
//! Every random draw in the crate comes from a ChaCha8 stream keyed by the
//! user-facing seed plus a tuple of integers naming the draw site (node,
//! sample index, trajectory index, ...). Streams are therefore independent of
//! evaluation order and thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tags keep unrelated subsystems from sharing key tuples.
pub mod tag {
    pub const SCM_NOISE: u64 = 0x5343_4d4e;
    pub const SCM_INTERVENTION: u64 = 0x5343_4d49;
    pub const SCM_SEED: u64 = 0x5343_4d57;
    pub const ROLLOUT: u64 = 0x524f_4c4c;
    pub const EVAL: u64 = 0x4556_414c;
    pub const TRAIN: u64 = 0x5452_4e;
    pub const TRIAL: u64 = 0x5452_4c;
    pub const MIXING: u64 = 0x4d49_58;
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Fold a key tuple into a 64-bit seed.
pub fn derive_seed(base: u64, key: &[u64]) -> u64 {
    key.iter()
        .fold(splitmix64(base), |acc, &k| splitmix64(acc ^ splitmix64(k)))
}

/// An independent generator for the draw site named by `key`.
pub fn stream(base: u64, key: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, key))
}

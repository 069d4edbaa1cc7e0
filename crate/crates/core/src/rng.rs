//! Seeding contract for reproducible runs.
//!
//! Every random stream is a [`ChaCha12Rng`] seeded from a 64-bit value.
//! Independent streams for sweep cells and runs are obtained with
//! [`derive_seed`], which folds each index into the root seed through the
//! SplitMix64 finalizer. The derivation depends only on its inputs, so
//! streams never depend on scheduling order.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

pub type SimRng = ChaCha12Rng;

/// Stream label mixed into the seed of the mobility stream.
pub const MOBILITY_STREAM: u64 = 0x6d6f_6269_6c69_7479;
/// Stream label mixed into the seed of the sensing stream.
pub const SENSING_STREAM: u64 = 0x7365_6e73_696e_6700;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a child seed from `root` and a sequence of indices.
pub fn derive_seed(root: u64, indices: &[u64]) -> u64 {
    indices
        .iter()
        .fold(splitmix64(root), |acc, &i| splitmix64(acc ^ splitmix64(i)))
}

pub fn stream(seed: u64) -> SimRng {
    SimRng::seed_from_u64(seed)
}

//! Keyed hashing and deterministic random streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

/// SplitMix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Keyed pseudorandom function of two words.
#[inline]
pub fn hash2(key: u64, index: u64) -> u64 {
    mix64(key ^ mix64(index.wrapping_add(GOLDEN)))
}

/// Maps a 64-bit hash to a uniform double in `[0, 1)`.
#[inline]
pub fn unit_f64(h: u64) -> f64 {
    (h >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

pub fn derive_seed(master: u64, stream: u64) -> u64 {
    hash2(mix64(master ^ 0x5851_f42d_4c95_7f2d), stream)
}

/// Independent random stream number `stream` under `master`.
pub fn stream_rng(master: u64, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, stream))
}

//! Seeding discipline: all randomness flows from one run seed, and every
//! consumer derives its own stream through [`sub_seed`] with a fixed tag.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Derive a child seed from a parent seed and a textual tag.
///
/// Two different tags give statistically independent streams; the same
/// (seed, tag) pair always gives the same child seed, on every platform.
pub fn sub_seed(seed: u64, tag: &str) -> u64 {
    let mut h = splitmix64(seed ^ 0x9e37_79b9_7f4a_7c15);
    for &b in tag.as_bytes() {
        h = splitmix64(h ^ u64::from(b));
    }
    h
}

/// A seeded RNG for the given (seed, tag) stream.
pub fn stream(seed: u64, tag: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(sub_seed(seed, tag))
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

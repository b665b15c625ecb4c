//! All randomness flows from one seed through named sub-streams, so data
//! generation, weight init, and augmentation can be reseeded independently
//! and parallel sample generation never changes output.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Named sub-stream: `stream(seed, "init")`, `stream(seed, "augment")`, ...
pub fn stream(seed: u64, name: &str) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(splitmix(seed ^ fnv1a(name.as_bytes())))
}

/// Per-sample stream, independent of generation order.
pub fn sample_stream(seed: u64, index: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(splitmix(splitmix(seed) ^ index))
}

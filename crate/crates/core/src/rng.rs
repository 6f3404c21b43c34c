//! Seeded random streams.
//!
//! All randomness in the crate flows from a single `u64` seed through named
//! sub-streams, so that independent components (weight init, batch order,
//! scene content) draw from decoupled, reproducible generators.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// FNV-1a over the stream name; stable across platforms and versions.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Derive a sub-seed from a base seed and a stream name.
pub fn sub_seed(seed: u64, name: &str) -> u64 {
    // splitmix-style finalizer keeps nearby seeds decorrelated
    let mut z = seed ^ fnv1a(name.as_bytes());
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// A named random stream derived from the run seed.
pub fn stream(seed: u64, name: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(sub_seed(seed, name))
}

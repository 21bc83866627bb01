//! Seed derivation for independent deterministic random streams.
//!
//! A single experiment seed fans out into one stream per purpose (weight
//! init, per-satellite masks, per-round batch shuffles, ...). Streams are
//! labeled so adding a consumer never shifts the draws of another.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Derives a child seed from `master`, a purpose label, and an index.
///
/// Uses FNV-1a over the label followed by two rounds of splitmix64 so
/// that nearby `(master, index)` pairs land far apart.
pub fn derive_seed(master: u64, label: &str, index: u64) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    splitmix(splitmix(master ^ h).wrapping_add(index))
}

/// Seeded RNG for a labeled stream.
pub fn stream(master: u64, label: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, label, index))
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

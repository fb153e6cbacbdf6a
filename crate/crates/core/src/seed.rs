//! Seed derivation.
//!
//! Child seeds are derived from a parent seed and a sequence of tags with the
//! SplitMix64 finaliser, so adding a new consumer never perturbs the streams of
//! existing ones.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The RNG used everywhere in the crate.
pub type Rng = ChaCha8Rng;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a child seed from `parent` and one tag.
pub fn derive(parent: u64, tag: u64) -> u64 {
    splitmix(splitmix(parent) ^ tag.rotate_left(17))
}

/// Derive a child seed from `parent` and a path of tags.
pub fn derive_path(parent: u64, tags: &[u64]) -> u64 {
    tags.iter().fold(parent, |acc, &t| derive(acc, t))
}

/// Stable 64-bit tag for a name (FNV-1a).
pub fn tag(name: &str) -> u64 {
    name.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

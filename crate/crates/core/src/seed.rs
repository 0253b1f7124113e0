//! Seed derivation for replica-level random streams.
//!
//! Every random stream in the crate is obtained from a `(master, tag, index)`
//! tuple through [`derive_seed`]. The mixing function is the SplitMix64
//! finalizer applied in a chain:
//!
//! ```text
//! h0 = mix(master ^ 0x9E37_79B9_7F4A_7C15)
//! h1 = mix(h0 ^ fnv1a64(tag))
//! seed = mix(h1 ^ index)
//! ```
//!
//! `mix` is a bijection on `u64`, so for a fixed `(master, tag)` distinct
//! indices always give distinct seeds. Distinct tags separate streams that
//! belong to different modules.

use rand::SeedableRng;
use rand_pcg::Pcg64Mcg;

/// Generator used for every stream in the crate.
pub type StreamRng = Pcg64Mcg;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a64(tag: &str) -> u64 {
    let mut h: u64 = 0xCBF2_9CE4_8422_2325;
    for b in tag.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

/// Derives the seed of stream `index` under module `tag`.
pub fn derive_seed(master: u64, tag: &str, index: u64) -> u64 {
    let h0 = mix64(master ^ GOLDEN);
    let h1 = mix64(h0 ^ fnv1a64(tag));
    mix64(h1 ^ index)
}

/// Generator seeded directly from a 64-bit seed.
pub fn stream(seed: u64) -> StreamRng {
    StreamRng::seed_from_u64(seed)
}

/// Shorthand for `stream(derive_seed(master, tag, index))`.
pub fn derived_stream(master: u64, tag: &str, index: u64) -> StreamRng {
    stream(derive_seed(master, tag, index))
}

/// Maps a 64-bit word to a uniform in `[0, 1)` with 53 bits of precision.
#[inline]
pub fn unit_f64(word: u64) -> f64 {
    (word >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

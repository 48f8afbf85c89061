//! Seed derivation and the PRNG used everywhere in the lab.
//!
//! All randomness flows from explicit 64-bit seeds through ChaCha8, a
//! counter-based generator; child streams are derived by hashing
//! `(parent, index)` with SplitMix64 so that parallel work is reproducible
//! regardless of scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type LabRng = ChaCha8Rng;

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Child seed for stream `index` of `base`: `base XOR hash(index)`, rehashed
/// so that neighbouring bases do not produce neighbouring children.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    mix64(base ^ mix64(index))
}

/// Child seed keyed by a label, for named sub-streams ("train", "walk", ...).
pub fn derive_named(base: u64, label: &str) -> u64 {
    // FNV-1a over the label, then mixed with the base.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    derive_seed(base, h)
}

pub fn rng_from_seed(seed: u64) -> LabRng {
    ChaCha8Rng::seed_from_u64(seed)
}

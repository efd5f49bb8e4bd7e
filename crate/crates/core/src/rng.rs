//! Seeded, splittable randomness.
//!
//! Every actor in a run draws from its own ChaCha stream whose seed is a
//! SplitMix64 hash of the master seed and a label path. Adding or removing
//! draws in one stream never perturbs another.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

pub type StreamRng = ChaCha12Rng;

/// Named stream families.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Data = 1,
    ModelInit = 2,
    Scheduler = 3,
    Training = 4,
    Quantize = 5,
    Mask = 6,
    ServerStaleness = 7,
    Pairwise = 8,
    SweepChild = 9,
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds `parts` into `master` one word at a time.
pub fn derive_seed(master: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(splitmix64(master), |acc, &p| splitmix64(acc.rotate_left(23) ^ splitmix64(p)))
}

pub fn stream(master: u64, family: Stream, parts: &[u64]) -> StreamRng {
    let mut all = Vec::with_capacity(parts.len() + 1);
    all.push(family as u64);
    all.extend_from_slice(parts);
    StreamRng::seed_from_u64(derive_seed(master, &all))
}

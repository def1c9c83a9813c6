//! Deterministic sub-seed derivation.
//!
//! Every randomized stage (data generation, EDS decimation, parameter init,
//! shuffling) owns an independent RNG seeded through [`derive`], so results
//! never depend on call order or thread scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Domain tags keeping unrelated random streams apart.
pub mod tag {
    pub const SAMPLE: u64 = 0x01;
    pub const PHASE_MAP: u64 = 0x02;
    pub const BSE: u64 = 0x03;
    pub const SPECTRUM: u64 = 0x04;
    pub const SPLIT: u64 = 0x05;
    pub const INIT: u64 = 0x06;
    pub const SHUFFLE: u64 = 0x07;
    pub const REQUEST: u64 = 0x08;
    pub const VALIDATION: u64 = 0x09;
    pub const EVAL: u64 = 0x0a;
}

/// Mixes a base seed with a tag into a new seed (splitmix64 finalizer).
pub fn derive(base: u64, tag: u64) -> u64 {
    let mut z = base ^ tag.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives through a chain of tags, e.g. `(seed, REQUEST, epoch, position)`.
pub fn derive_chain(base: u64, tags: &[u64]) -> u64 {
    tags.iter().fold(base, |acc, &t| derive(acc, t))
}

/// A fresh deterministic RNG for the given seed.
pub fn rng_from(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

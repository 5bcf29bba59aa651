//! Seed derivation. Every random stream in the simulator is a ChaCha8 generator
//! keyed by a root seed mixed with a small tuple of stream coordinates, so that
//! adding a consumer never perturbs another consumer's draws.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a sub-seed from a root seed and stream coordinates.
pub fn derive(seed: u64, coords: &[u64]) -> u64 {
    coords
        .iter()
        .fold(mix64(seed), |acc, &c| mix64(acc ^ mix64(c.wrapping_add(0x5851_F42D_4C95_7F2D))))
}

pub fn stream(seed: u64, coords: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(seed, coords))
}

/// Stream tags, kept distinct so streams never alias.
pub mod tag {
    pub const INIT: u64 = 1;
    pub const BATCH: u64 = 2;
    pub const VISIT: u64 = 3;
    pub const EPSL_GROUP: u64 = 4;
    pub const DATA: u64 = 5;
    pub const PARTITION: u64 = 6;
    pub const TOPOLOGY: u64 = 7;
}

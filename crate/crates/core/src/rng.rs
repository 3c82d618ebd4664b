//! Seed derivation. Every stochastic step in the pipeline draws from a
//! ChaCha stream keyed by a 64-bit seed derived from its logical position
//! (part id, trial, candidate index) rather than from a shared generator,
//! so results do not depend on iteration order or worker count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Order-sensitive combination of a seed with one more key.
pub fn mix(seed: u64, key: u64) -> u64 {
    splitmix64(splitmix64(seed) ^ key.rotate_left(17) ^ 0x5851_F42D_4C95_7F2D)
}

pub fn mix3(seed: u64, a: u64, b: u64) -> u64 {
    mix(mix(seed, a), b)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Purpose tags keep streams derived from the same logical key apart.
pub mod stream {
    pub const POSE: u64 = 0x706f_7365;
    pub const GRASP: u64 = 0x6772_6173;
    pub const NOISE: u64 = 0x6e6f_6973;
    pub const SPLIT: u64 = 0x7370_6c69;
    pub const BALANCE: u64 = 0x6261_6c61;
    pub const INIT: u64 = 0x696e_6974;
    pub const SHUFFLE: u64 = 0x7368_7566;
    pub const DROPOUT: u64 = 0x6472_6f70;
    pub const TRIAL: u64 = 0x7472_6961;
    pub const PART: u64 = 0x7061_7274;
}

//! Seeded random streams.
//!
//! All randomness in the crate comes from `ChaCha8Rng`. A run seed is split
//! into independent streams by purpose so that enabling one component never
//! shifts the draws seen by another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Stream identifiers. Values are part of the determinism contract.
pub mod streams {
    pub const LABELED_SHAPE: u64 = 1;
    pub const UNLABELED_SHAPE: u64 = 2;
    pub const FEATURES: u64 = 3;
    pub const INIT: u64 = 10;
    pub const BATCHES: u64 = 20;
    pub const UNLABELED_BATCHES: u64 = 23;
    pub const VIEWS: u64 = 21;
    pub const SYNTH: u64 = 22;
}

/// Deterministic RNG for `(seed, stream)`.
pub fn stream(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

//! Seed derivation for reproducible, thread-count-independent replication sweeps.
//!
//! Every stochastic operation in the crate takes an explicit `u64` seed. Child
//! seeds are derived from a parent seed and a stream label with SplitMix64 so
//! that replication `m` of ratio `j` gets the same generator no matter which
//! worker runs it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The generator used throughout the crate.
pub type OpeRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from `parent` and a sequence of stream labels.
pub fn derive_seed(parent: u64, stream: &[u64]) -> u64 {
    stream
        .iter()
        .fold(splitmix64(parent), |acc, &label| splitmix64(acc ^ splitmix64(label)))
}

pub fn rng_from_seed(seed: u64) -> OpeRng {
    OpeRng::seed_from_u64(seed)
}

/// Named stream labels so call sites do not collide by accident.
pub mod stream {
    pub const CONTEXT: u64 = 1;
    pub const LOGGER: u64 = 2;
    pub const FOLDS: u64 = 3;
    pub const PARTITION: u64 = 4;
    pub const ACTIONS: u64 = 5;
    pub const STARTS: u64 = 6;
    pub const REPLICATION: u64 = 7;
    pub const SPLIT: u64 = 8;
    pub const FIXTURE: u64 = 9;
}

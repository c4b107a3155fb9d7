//! Seeded random streams.
//!
//! Every stochastic concern in a run (mobility, data shards, attacker
//! choices, exploration) draws from its own stream keyed by the run seed
//! and a path of indices. Two runs that differ only in defense mode
//! therefore see the same mobility, data and compromise plan.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// Stream identifiers. Values are part of the determinism contract.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Setup = 1,
    Mobility = 2,
    Data = 3,
    Adversary = 4,
    Traffic = 5,
    Agent = 6,
    LocalTraining = 7,
    Baseline = 8,
    Init = 9,
    Anticipator = 10,
    Predictor = 11,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Mixes a seed with a path of keys into a 64-bit value.
pub fn mix(seed: u64, keys: &[u64]) -> u64 {
    keys.iter()
        .fold(splitmix64(seed), |acc, &k| splitmix64(acc ^ splitmix64(k)))
}

/// A reproducible stream for `(seed, stream, keys...)`.
pub fn stream(seed: u64, which: Stream, keys: &[u64]) -> SimRng {
    let mut path = Vec::with_capacity(keys.len() + 1);
    path.push(which as u64);
    path.extend_from_slice(keys);
    ChaCha8Rng::seed_from_u64(mix(seed, &path))
}

/// Maps a hash to a uniform value in [0, 1).
pub fn unit_from_hash(h: u64) -> f64 {
    (h >> 11) as f64 / (1u64 << 53) as f64
}

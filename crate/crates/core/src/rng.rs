//! Seeded random streams.
//!
//! Every trajectory owns a ChaCha8 stream (a counter-based generator). Streams
//! for parallel work are derived as `master_seed ^ splitmix64(index)`, so the
//! numbers a repetition sees never depend on how work is scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// SplitMix64 finalizer.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn stream_seed(master: u64, index: u64) -> u64 {
    master ^ splitmix64(index)
}

pub fn stream(master: u64, index: u64) -> Rng {
    seeded(stream_seed(master, index))
}

//! Seed derivation. Every random draw comes from a ChaCha stream keyed by
//! (master seed, trial) and a purpose label, so results do not depend on how
//! trials are scheduled and adding trials never reshuffles earlier ones.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream labels for the independent random purposes within a trial.
pub mod stream {
    pub const SCENARIO: u64 = 1;
    pub const NOISE: u64 = 2;
    pub const BASELINE: u64 = 3;
    pub const SHADOWING: u64 = 4;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Per-trial seed mixed from the master seed and trial index.
pub fn trial_seed(master: u64, trial: u64) -> u64 {
    splitmix64(splitmix64(master) ^ trial.wrapping_mul(0xD6E8_FEB8_6659_FD93))
}

pub fn stream_rng(seed: u64, purpose: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(purpose);
    rng
}

//! Deterministic seed derivation.
//!
//! A master seed is split into per-session seeds by giving each session its
//! own ChaCha stream, so sessions can be generated in any order or in
//! parallel and still see the same random numbers.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

const POPULATION_STREAM: u64 = 0;
const ENGINE_STREAM: u64 = 1;

/// Seed of session `index` under `master_seed`.
pub fn session_seed(master_seed: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(index);
    rng.next_u64()
}

pub fn population_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(POPULATION_STREAM);
    rng
}

pub fn engine_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(ENGINE_STREAM);
    rng
}

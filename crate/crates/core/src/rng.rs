//! Random number generation contract.
//!
//! Every random draw in the crate comes from ChaCha20 (`rand_chacha`),
//! seeded with `seed_from_u64` and split into independent streams with
//! `set_stream`. Standard normal variates come from the ziggurat sampler of
//! `rand_distr::StandardNormal`. Both names are written into simulation
//! metadata by [`describe`].

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

pub type SimRng = ChaCha20Rng;

/// Stream used for initial-state and parameter draws.
pub const STREAM_PRIOR: u64 = 0;
/// Stream used for process-noise increments.
pub const STREAM_PROCESS: u64 = 1;
/// Stream used for measurement noise.
pub const STREAM_MEASUREMENT: u64 = 2;

/// Generator for `(seed, stream)`.
pub fn stream(seed: u64, stream: u64) -> SimRng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[inline]
pub fn standard_normal(rng: &mut SimRng) -> f64 {
    StandardNormal.sample(rng)
}

/// Seed of Monte Carlo replicate `i` for a batch seeded with `base`.
pub fn replicate_seed(base: u64, i: u64) -> u64 {
    base.wrapping_add(i)
}

/// Names of the generator and normal sampler, for run metadata.
pub fn describe() -> (&'static str, &'static str) {
    (
        "ChaCha20 (rand_chacha 0.9, seed_from_u64, stream 0 prior / 1 process / 2 measurement)",
        "ziggurat (rand_distr 0.5 StandardNormal)",
    )
}

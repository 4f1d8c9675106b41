//! Counter-keyed random streams.
//!
//! Every `(seed, path, step)` triple owns its own ChaCha stream position, so a
//! path draws the same numbers no matter which thread runs it or in which
//! order the paths are scheduled.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Room for 2^32 words per step.
const WORDS_PER_STEP_SHIFT: u32 = 32;

pub fn stream(seed: u64, path: u64, step: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path);
    rng.set_word_pos((step as u128) << WORDS_PER_STEP_SHIFT);
    rng
}

/// `dim` independent standard normals for one `(seed, path, step)`.
pub fn normals(seed: u64, path: u64, step: u64, dim: usize) -> Vec<f64> {
    let mut rng = stream(seed, path, step);
    (0..dim).map(|_| rng.sample(StandardNormal)).collect()
}

/// Sub-seed for an auxiliary purpose (bootstrap, random test data) so those
/// draws never overlap the simulation streams.
pub fn derived_seed(seed: u64, purpose: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    rng.set_stream(purpose.wrapping_add(1) << 32);
    rng.random()
}

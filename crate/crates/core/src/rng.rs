//! Seeded generators and split-by-index substreams.
//!
//! Every stochastic routine takes a caller-owned [`Rng`]. Work that fans out
//! over independent units (batches, trials, domains) derives one substream
//! per unit index from a single `u64` drawn from the parent, so results do
//! not depend on how the units are scheduled across threads.

use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Substream `index` of the family keyed by `key`.
pub fn substream(key: u64, index: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    rng.set_stream(index);
    rng
}

/// Draws a fresh family key from `rng`; substreams of that key are
/// independent of the parent's future output.
pub fn split_key(rng: &mut Rng) -> u64 {
    rng.random()
}

/// Standard normal draw.
pub fn normal(rng: &mut Rng) -> f64 {
    rng.sample(rand_distr::StandardNormal)
}

/// Uniform draw on the open interval (0, 1).
pub fn open01(rng: &mut Rng) -> f64 {
    rng.sample(rand_distr::Open01)
}

//! Seeded randomness.
//!
//! Every stochastic routine draws from [`ChaCha8Rng`], a counter-based
//! generator whose output stream is fixed by its seed on every platform.
//! Gaussian variates come from `rand_distr`'s ziggurat sampler, which is
//! likewise portable, so identical seeds give identical traces everywhere.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub type SeededRng = ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Draws `len` i.i.d. samples from N(0, stddev²).
pub fn gaussian_vec(rng: &mut SeededRng, len: usize, stddev: f64) -> Vec<f64> {
    (0..len)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            z * stddev
        })
        .collect()
}

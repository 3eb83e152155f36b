//! Seeded random streams.
//!
//! Every stochastic quantity in a run is drawn from its own ChaCha stream whose
//! seed is derived from the run seed plus a small tag tuple, so the order in which
//! streams are consumed never affects their contents.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub type StreamRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a base seed with a list of tags into a new, well-spread seed.
pub fn derive_seed(base: u64, tags: &[u64]) -> u64 {
    tags.iter()
        .fold(splitmix64(base), |acc, &t| splitmix64(acc ^ splitmix64(t)))
}

pub fn stream(seed: u64) -> StreamRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `len` standard normal draws from the stream seeded by `seed`.
pub fn gaussian(seed: u64, len: usize) -> Vec<f64> {
    let mut rng = stream(seed);
    (0..len).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

/// `len` uniform draws from `[-bound, bound)`.
pub fn uniform_symmetric(rng: &mut StreamRng, bound: f64, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.random_range(-bound..bound)).collect()
}

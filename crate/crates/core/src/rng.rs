//! Seeded sampling helpers shared by the solver path and the data generators.
//!
//! The brute-force oracle deliberately does not use these; it carries its own
//! sampling so the two routes stay independent.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub(crate) fn standard_normal_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Uniform direction on the unit sphere.
pub(crate) fn random_unit(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    loop {
        let mut v = standard_normal_vec(rng, n);
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-30 {
            for x in v.iter_mut() {
                *x /= norm;
            }
            return v;
        }
    }
}

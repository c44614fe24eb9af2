use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::grid::BoundaryData;

/// Pointwise Gaussian noise `f + eps * eta * max|f|`, with `eta` drawn from
/// a ChaCha8 stream seeded by `seed`.
pub fn add_noise(f: &BoundaryData, epsilon: f64, seed: u64) -> BoundaryData {
    let mut out = f.clone();
    if epsilon == 0.0 {
        return out;
    }
    let amplitude = epsilon * f.max_abs();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for v in out.values_mut().iter_mut() {
        let eta: f64 = StandardNormal.sample(&mut rng);
        *v += amplitude * eta;
    }
    out
}

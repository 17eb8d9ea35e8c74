use crate::embedding_store::EmbeddingSet;
use crate::error::{Error, Result};
use crate::hypersphere::{TransformMatrix, TransformMethod, EPS_NORM};
use crate::rng::{gaussian_vec, seeded_rng};

/// Standard deviation of the entries of an untrained transform.
pub const RANDOM_TRANSFORM_STDDEV: f64 = 0.1;

/// An `r × r'` matrix of i.i.d. `N(0, 0.1²)` entries; also the starting point of training.
pub fn random_transform(r: usize, r_prime: usize, seed: u64) -> Result<TransformMatrix> {
    if r_prime == 0 || r_prime > r {
        return Err(Error::Config(format!(
            "target dimension {r_prime} must lie in 1..={r}"
        )));
    }
    let mut rng = seeded_rng(seed);
    let values = gaussian_vec(&mut rng, r * r_prime, RANDOM_TRANSFORM_STDDEV);
    TransformMatrix::new(r, r_prime, values, TransformMethod::Random, seed)
}

/// `m` points drawn uniformly from the unit sphere in `r'` dimensions.
///
/// Each row is a standard Gaussian vector scaled to unit length.
pub fn random_unit_embeddings(m: usize, r_prime: usize, seed: u64) -> Result<EmbeddingSet> {
    if m == 0 || r_prime == 0 {
        return Err(Error::Config(
            "need at least one row and one dimension".into(),
        ));
    }
    let mut rng = seeded_rng(seed);
    let mut data = Vec::with_capacity(m * r_prime);
    for _ in 0..m {
        loop {
            let v = gaussian_vec(&mut rng, r_prime, 1.0);
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n > EPS_NORM {
                data.extend(v.iter().map(|x| x / n));
                break;
            }
        }
    }
    EmbeddingSet::new(r_prime, data, None)
}

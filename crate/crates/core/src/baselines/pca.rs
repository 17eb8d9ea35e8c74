use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::embedding_store::EmbeddingSet;
use crate::error::{Error, Result};
use crate::hypersphere::{TransformMatrix, TransformMethod};
use crate::indirect::normalized_rows;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PcaOptions {
    /// Subtract the row mean before the decomposition.
    pub center: bool,
    /// Scale rows to unit length first.
    pub normalize: bool,
}

impl Default for PcaOptions {
    fn default() -> Self {
        Self {
            center: true,
            normalize: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcaFit {
    /// Principal directions as orthonormal columns, by descending variance.
    pub transform: TransformMatrix,
    pub explained_variance: Vec<f64>,
    pub mean: Vec<f64>,
}

/// Top `target_dim` principal directions of the normalized, centered rows of `t`.
pub fn fit_pca(t: &EmbeddingSet, target_dim: usize) -> Result<TransformMatrix> {
    Ok(fit_pca_with(t, target_dim, PcaOptions::default())?.transform)
}

pub fn fit_pca_with(t: &EmbeddingSet, target_dim: usize, options: PcaOptions) -> Result<PcaFit> {
    let (n, r) = (t.count(), t.dim());
    if target_dim == 0 || target_dim > r {
        return Err(Error::Config(format!(
            "target dimension {target_dim} must lie in 1..={r}"
        )));
    }
    if target_dim >= n {
        return Err(Error::PcaNotApplicable {
            target_dim,
            count: n,
        });
    }

    let mut x = if options.normalize {
        normalized_rows(t)?
    } else {
        DMatrix::from_row_slice(n, r, t.data())
    };
    let mean: Vec<f64> = if options.center {
        let mean = x.row_mean();
        for mut row in x.row_iter_mut() {
            row -= &mean;
        }
        mean.iter().copied().collect()
    } else {
        vec![0.0; r]
    };

    let svd = x.svd(false, true);
    let v_t = svd.v_t.expect("right singular vectors requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| {
        svd.singular_values[b]
            .total_cmp(&svd.singular_values[a])
            .then(a.cmp(&b))
    });

    let sigma_max = svd.singular_values.max();
    let tol = sigma_max * n.max(r) as f64 * f64::EPSILON;
    let attainable = svd.singular_values.iter().filter(|&&s| s > tol).count();
    if attainable < target_dim {
        return Err(Error::RankDeficient {
            attainable,
            requested: target_dim,
        });
    }

    let mut u = DMatrix::zeros(r, target_dim);
    let mut explained_variance = Vec::with_capacity(target_dim);
    for (col, &k) in order.iter().take(target_dim).enumerate() {
        let mut dir = v_t.row(k).transpose();
        let pivot = dir
            .iter()
            .enumerate()
            .fold((0, 0.0f64), |best, (i, &v)| {
                if v.abs() > best.1 {
                    (i, v.abs())
                } else {
                    best
                }
            })
            .0;
        if dir[pivot] < 0.0 {
            dir.neg_mut();
        }
        u.set_column(col, &dir);
        let s = svd.singular_values[k];
        explained_variance.push(s * s / (n - 1) as f64);
    }

    Ok(PcaFit {
        transform: TransformMatrix::from_matrix(&u, TransformMethod::Pca, 0)?,
        explained_variance,
        mean,
    })
}

impl PcaFit {
    /// Squared error of reconstructing the prepared rows of `t` from their
    /// projection onto the principal subspace, summed over rows.
    pub fn reconstruction_error(&self, t: &EmbeddingSet, options: PcaOptions) -> Result<f64> {
        let mut x = if options.normalize {
            normalized_rows(t)?
        } else {
            DMatrix::from_row_slice(t.count(), t.dim(), t.data())
        };
        let mean = nalgebra::RowDVector::from_row_slice(&self.mean);
        for mut row in x.row_iter_mut() {
            row -= &mean;
        }
        let u = self.transform.to_matrix();
        let residual = &x - (&x * &u) * u.transpose();
        Ok(residual.norm_squared())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::indirect::indirect_loss;
    use crate::rng::{gaussian_vec, seeded_rng};

    fn gaussian_set(n: usize, scales: &[f64], seed: u64) -> EmbeddingSet {
        let mut rng = seeded_rng(seed);
        let r = scales.len();
        let z = gaussian_vec(&mut rng, n * r, 1.0);
        let data = z
            .chunks_exact(r)
            .flat_map(|row| {
                row.iter()
                    .zip(scales)
                    .map(|(x, s)| x * s)
                    .collect::<Vec<_>>()
            })
            .collect();
        EmbeddingSet::new(r, data, None).unwrap()
    }

    #[test]
    fn ellipse_major_axis() {
        // Points on an ellipse in the x-y plane, lifted off the origin along z
        // so normalization keeps them distinct.
        let rows: Vec<[f64; 3]> = (0..64)
            .map(|i| {
                let a = i as f64 / 64.0 * std::f64::consts::TAU;
                [0.3 * a.cos(), 0.05 * a.sin(), 1.0]
            })
            .collect();
        let t = EmbeddingSet::from_rows(&rows, None).unwrap();
        let u = fit_pca(&t, 1).unwrap();
        assert!(u.get(0, 0) > 0.999, "{:?}", u.values());
    }

    #[test]
    fn isotropic_variances_are_close() {
        let t = gaussian_set(10_000, &[1.0, 1.0, 1.0], 1);
        let fit = fit_pca_with(
            &t,
            2,
            PcaOptions {
                center: true,
                normalize: false,
            },
        )
        .unwrap();
        let (a, b) = (fit.explained_variance[0], fit.explained_variance[1]);
        assert!(a >= b);
        assert!((a - b) / a < 0.1, "{a} {b}");
    }

    #[test]
    fn columns_are_orthonormal() {
        let t = gaussian_set(100, &[1.0; 16], 2);
        let u = fit_pca(&t, 6).unwrap().to_matrix();
        let gram = u.transpose() * &u;
        assert!((gram - DMatrix::<f64>::identity(6, 6)).amax() < 1e-9);
    }

    #[test]
    fn applicability_and_rank() {
        let t = gaussian_set(4, &[1.0; 8], 3);
        assert!(matches!(
            fit_pca(&t, 4),
            Err(Error::PcaNotApplicable {
                target_dim: 4,
                count: 4
            })
        ));
        // Rows in the x-y plane: centered rank is at most 2.
        let rows = [
            [1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [1.0, 1.0, 0.0],
            [2.0, 1.0, 0.0],
            [1.0, 3.0, 0.0],
        ];
        let t = EmbeddingSet::from_rows(&rows, None).unwrap();
        assert!(matches!(
            fit_pca(&t, 3),
            Err(Error::RankDeficient { requested: 3, .. })
        ));
    }

    #[test]
    fn uncentered_variant_differs() {
        let rows = [
            [1.0, 0.1, 0.0],
            [1.0, -0.1, 0.05],
            [1.0, 0.0, -0.1],
            [1.0, 0.05, 0.1],
        ];
        let t = EmbeddingSet::from_rows(&rows, None).unwrap();
        let raw = fit_pca_with(
            &t,
            1,
            PcaOptions {
                center: false,
                normalize: true,
            },
        )
        .unwrap();
        // Without centering the shared mean direction dominates.
        assert!(raw.transform.get(0, 0) > 0.99);
        let centered = fit_pca(&t, 1).unwrap();
        assert!(centered.get(0, 0).abs() < 0.2);
    }

    #[test]
    fn subspace_with_mean_direction_is_reconstructed() {
        // Normalized rows lie in span{e1, e2, e3}; the mean direction is inside it.
        let mut rng = seeded_rng(4);
        let rows: Vec<Vec<f64>> = (0..40)
            .map(|_| {
                let mut v = vec![0.0; 10];
                let c = gaussian_vec(&mut rng, 3, 1.0);
                v[0] = c[0] + 3.0;
                v[1] = c[1];
                v[2] = c[2];
                v
            })
            .collect();
        let t = EmbeddingSet::from_rows(&rows, None).unwrap();
        let u = fit_pca(&t, 3).unwrap();
        assert!(indirect_loss(&u, &t).unwrap() < 1e-3);
    }
}

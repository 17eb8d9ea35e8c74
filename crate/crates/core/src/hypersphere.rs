//! Unit-hypersphere primitives: normalization, projection through a
//! transform, reconstruction through its transpose, and arc distance.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding_store::EmbeddingSet;
use crate::error::{Error, Result};

/// Norms at or below this are treated as having no direction.
pub const EPS_NORM: f64 = 1e-12;

/// A vector of Euclidean length one.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitVector(Vec<f64>);

impl UnitVector {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

impl AsRef<[f64]> for UnitVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// Which procedure produced a [`TransformMatrix`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TransformMethod {
    Indirect,
    Pca,
    Random,
    LaeEncoder,
    Oracle,
    Identity,
}

/// A row-major `rows × cols` projection with `cols <= rows`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
    pub method: TransformMethod,
    pub seed: u64,
    #[serde(default)]
    pub loss_trace: Option<Vec<(usize, f64)>>,
}

impl TransformMatrix {
    pub fn new(
        rows: usize,
        cols: usize,
        values: Vec<f64>,
        method: TransformMethod,
        seed: u64,
    ) -> Result<Self> {
        if rows == 0 || cols == 0 || cols > rows {
            return Err(Error::Config(format!(
                "transform shape {rows}×{cols} needs 1 <= cols <= rows"
            )));
        }
        if values.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                expected: rows * cols,
                actual: values.len(),
            });
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self {
            rows,
            cols,
            values,
            method,
            seed,
            loss_trace: None,
        })
    }

    pub fn identity(dim: usize) -> Result<Self> {
        let mut values = vec![0.0; dim * dim];
        for i in 0..dim {
            values[i * dim + i] = 1.0;
        }
        Self::new(dim, dim, values, TransformMethod::Identity, 0)
    }

    pub fn from_matrix(m: &DMatrix<f64>, method: TransformMethod, seed: u64) -> Result<Self> {
        let values = m.transpose().as_slice().to_vec();
        Self::new(m.nrows(), m.ncols(), values, method, seed)
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.values)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.cols + j]
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `v / ‖v‖`.
pub fn normalize(v: &[f64]) -> Result<UnitVector> {
    let n = norm(v);
    if !(n > EPS_NORM) {
        return Err(Error::DegenerateDirection { norm: n });
    }
    Ok(UnitVector(v.iter().map(|x| x / n).collect()))
}

/// `normalize(v U)`: maps an `r`-dimensional unit vector to `r'` dimensions.
pub fn project(v: &UnitVector, u: &TransformMatrix) -> Result<UnitVector> {
    if v.dim() != u.rows {
        return Err(Error::DimensionMismatch {
            expected: u.rows,
            actual: v.dim(),
        });
    }
    let mut out = vec![0.0; u.cols];
    for (x, row) in v.0.iter().zip(u.values.chunks_exact(u.cols)) {
        for (o, w) in out.iter_mut().zip(row) {
            *o += x * w;
        }
    }
    normalize(&out)
}

/// `normalize(t' Uᵀ)`: maps an `r'`-dimensional unit vector back to `r` dimensions.
pub fn reconstruct(t_prime: &UnitVector, u: &TransformMatrix) -> Result<UnitVector> {
    if t_prime.dim() != u.cols {
        return Err(Error::DimensionMismatch {
            expected: u.cols,
            actual: t_prime.dim(),
        });
    }
    let out: Vec<f64> = u
        .values
        .chunks_exact(u.cols)
        .map(|row| dot(row, &t_prime.0))
        .collect();
    normalize(&out)
}

/// Arc length between two unit vectors, in radians.
pub fn spherical_distance(a: &UnitVector, b: &UnitVector) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            actual: b.dim(),
        });
    }
    Ok(dot(&a.0, &b.0).clamp(-1.0, 1.0).acos())
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    let (na, nb) = (norm(a), norm(b));
    if !(na > EPS_NORM) {
        return Err(Error::DegenerateDirection { norm: na });
    }
    if !(nb > EPS_NORM) {
        return Err(Error::DegenerateDirection { norm: nb });
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

/// Normalizes every row of `v`, projects it through `u` and renormalizes.
pub fn transform_images(v: &EmbeddingSet, u: &TransformMatrix) -> Result<EmbeddingSet> {
    if v.dim() != u.rows {
        return Err(Error::DimensionMismatch {
            expected: u.rows,
            actual: v.dim(),
        });
    }
    let rows: Vec<Vec<f64>> = (0..v.count())
        .into_par_iter()
        .map(|i| {
            normalize(v.row(i))
                .and_then(|x| project(&x, u))
                .map(UnitVector::into_vec)
                .map_err(|_| Error::DegenerateRow { row: v.row_name(i) })
        })
        .collect::<Result<_>>()?;
    EmbeddingSet::from_rows(&rows, v.ids().map(<[String]>::to_vec))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn unit(v: &[f64]) -> UnitVector {
        normalize(v).unwrap()
    }

    fn coord_projection() -> TransformMatrix {
        TransformMatrix::new(
            3,
            2,
            vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0],
            TransformMethod::Pca,
            0,
        )
        .unwrap()
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize(&[3.0, 4.0]).unwrap().as_slice(), &[0.6, 0.8]);
        assert_eq!(
            normalize(&[0.0, 0.0, 2.0]).unwrap().as_slice(),
            &[0.0, 0.0, 1.0]
        );
        assert!(matches!(
            normalize(&[0.0, 0.0]),
            Err(Error::DegenerateDirection { .. })
        ));
    }

    #[test]
    fn project_examples() {
        let u = coord_projection();
        let p = project(&unit(&[0.6, 0.0, 0.8]), &u).unwrap();
        assert_eq!(p.as_slice(), &[1.0, 0.0]);

        let id = TransformMatrix::identity(3).unwrap();
        let v = unit(&[0.2, -0.5, 0.3]);
        assert_eq!(project(&v, &id).unwrap(), v);

        let kernel = unit(&[0.0, 0.0, 1.0]);
        assert!(matches!(
            project(&kernel, &u),
            Err(Error::DegenerateDirection { .. })
        ));
    }

    #[test]
    fn reconstruct_examples() {
        let u = coord_projection();
        assert_eq!(
            reconstruct(&unit(&[1.0, 0.0]), &u).unwrap().as_slice(),
            &[1.0, 0.0, 0.0]
        );
        let id = TransformMatrix::identity(2).unwrap();
        let t = unit(&[0.6, 0.8]);
        assert_eq!(reconstruct(&t, &id).unwrap(), t);

        let u = TransformMatrix::new(2, 1, vec![1.0, 1.0], TransformMethod::Random, 0).unwrap();
        let r = reconstruct(&unit(&[1.0]), &u).unwrap();
        let h = 2f64.sqrt() / 2.0;
        assert!((r.as_slice()[0] - h).abs() < 1e-15 && (r.as_slice()[1] - h).abs() < 1e-15);
    }

    #[test]
    fn distance_examples() {
        let e1 = unit(&[1.0, 0.0]);
        let e2 = unit(&[0.0, 1.0]);
        let neg = unit(&[-1.0, 0.0]);
        assert_eq!(spherical_distance(&e1, &e1).unwrap(), 0.0);
        assert_eq!(spherical_distance(&e1, &e2).unwrap(), FRAC_PI_2);
        assert_eq!(spherical_distance(&e1, &neg).unwrap(), PI);
        assert!(spherical_distance(&e1, &unit(&[1.0, 0.0, 0.0])).is_err());
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[2.0, 0.0]).unwrap(), 1.0);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 3.0]).unwrap(), 0.0);
        let c = cosine_similarity(&[1.0, 1.0], &[1.0, 0.0]).unwrap();
        assert!((c - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        assert!(cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn transform_images_examples() {
        let v = EmbeddingSet::from_rows(&[[0.6, 0.0, 0.8], [0.0, 1.0, 0.0]], None).unwrap();
        let id = TransformMatrix::identity(3).unwrap();
        assert_eq!(transform_images(&v, &id).unwrap(), v);

        let out = transform_images(&v, &coord_projection()).unwrap();
        assert_eq!(out.row(0), &[1.0, 0.0]);
        assert_eq!(out.dim(), 2);

        let bad = EmbeddingSet::from_rows(
            &[[0.6, 0.0, 0.8], [0.0, 0.0, 1.0]],
            Some(vec!["ok".into(), "kernel".into()]),
        )
        .unwrap();
        assert!(matches!(
            transform_images(&bad, &coord_projection()),
            Err(Error::DegenerateRow { row }) if row == "kernel"
        ));
    }

    fn unit_vec(dim: usize) -> impl Strategy<Value = UnitVector> {
        prop::collection::vec(-1.0f64..1.0, dim)
            .prop_filter("non-degenerate", |v| norm(v) > 1e-3)
            .prop_map(|v| normalize(&v).unwrap())
    }

    proptest! {
        #[test]
        fn normalize_yields_unit_norm(v in prop::collection::vec(-1e3f64..1e3, 1..32)) {
            prop_assume!(norm(&v) > 1e-6);
            prop_assert!((norm(normalize(&v).unwrap().as_slice()) - 1.0).abs() <= 1e-12);
        }

        #[test]
        fn distance_is_a_metric(a in unit_vec(5), b in unit_vec(5), c in unit_vec(5)) {
            let ab = spherical_distance(&a, &b).unwrap();
            let ba = spherical_distance(&b, &a).unwrap();
            let bc = spherical_distance(&b, &c).unwrap();
            let ac = spherical_distance(&a, &c).unwrap();
            prop_assert_eq!(ab, ba);
            prop_assert!(ac <= ab + bc + 1e-12);
            prop_assert!(spherical_distance(&a, &a).unwrap() < 1e-7);
        }

        #[test]
        fn transform_ignores_power_of_two_scales(
            rows in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 4), 1..6),
            exp in -20i32..20,
            u in prop::collection::vec(-1.0f64..1.0, 8),
        ) {
            prop_assume!(rows.iter().all(|r| norm(r) > 1e-3));
            let u = TransformMatrix::new(4, 2, u, TransformMethod::Random, 0).unwrap();
            let v = EmbeddingSet::from_rows(&rows, None).unwrap();
            let scale = 2f64.powi(exp);
            let scaled: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|x| x * scale).collect()).collect();
            let w = EmbeddingSet::from_rows(&scaled, None).unwrap();
            if let Ok(a) = transform_images(&v, &u) {
                prop_assert_eq!(a, transform_images(&w, &u).unwrap());
            }
        }

        #[test]
        fn transform_ignores_arbitrary_scales_to_rounding(
            row in prop::collection::vec(-1.0f64..1.0, 4),
            scale in 1e-3f64..1e3,
            u in prop::collection::vec(-1.0f64..1.0, 8),
        ) {
            prop_assume!(norm(&row) > 1e-3);
            let u = TransformMatrix::new(4, 2, u, TransformMethod::Random, 0).unwrap();
            let v = EmbeddingSet::from_rows(std::slice::from_ref(&row), None).unwrap();
            let w = EmbeddingSet::from_rows(&[row.iter().map(|x| x * scale).collect::<Vec<_>>()], None).unwrap();
            if let Ok(a) = transform_images(&v, &u) {
                let b = transform_images(&w, &u).unwrap();
                for (x, y) in a.data().iter().zip(b.data()) {
                    prop_assert!((x - y).abs() < 1e-12);
                }
            }
        }

        #[test]
        fn orthonormal_roundtrip_within_span(coeffs in prop::collection::vec(-1.0f64..1.0, 2)) {
            prop_assume!(norm(&coeffs) > 1e-3);
            // Columns: orthonormal basis of a plane in R^3.
            let s = 0.5f64.sqrt();
            let u = TransformMatrix::new(3, 2, vec![s, 0.0, s, 0.0, 0.0, 1.0], TransformMethod::Pca, 0).unwrap();
            let v = normalize(&[coeffs[0] * s, coeffs[0] * s, coeffs[1]]).unwrap();
            let back = reconstruct(&project(&v, &u).unwrap(), &u).unwrap();
            for (x, y) in back.as_slice().iter().zip(v.as_slice()) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }
    }
}

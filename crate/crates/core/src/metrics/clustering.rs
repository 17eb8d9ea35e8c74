//! Spherical k-means and the clustering agreement scores NMI and AMI.
//!
//! Both scores use the arithmetic mean of the two partition entropies as
//! normalizer; AMI corrects for chance with the expected mutual information
//! under the permutation model.

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::embedding_store::EmbeddingSet;
use crate::error::{Error, Result};
use crate::hypersphere::EPS_NORM;
use crate::rng::seeded_rng;

pub const KMEANS_MAX_ITERATIONS: usize = 300;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeans {
    pub assignments: Vec<usize>,
    /// Unit-length centroids, row-major `k × dim`.
    pub centroids: Vec<f64>,
    /// `Σ (1 - cos(x, centroid))` after every assignment step.
    pub objective_trace: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Clusters the rows of `e` by cosine similarity into `k` groups.
///
/// Seeding is k-means++ with `1 - cos` as the distance. A cluster that ends
/// up empty is re-seeded with the point farthest from its own centroid.
pub fn kmeans(e: &EmbeddingSet, k: usize, seed: u64) -> Result<KMeans> {
    let (m, dim) = (e.count(), e.dim());
    if k == 0 || k > m {
        return Err(Error::Config(format!("k = {k} must lie in 1..={m}")));
    }
    let mut x = e.data().to_vec();
    for (i, row) in x.chunks_exact_mut(dim).enumerate() {
        let n = dot(row, row).sqrt();
        if !(n > EPS_NORM) {
            return Err(Error::DegenerateRow { row: e.row_name(i) });
        }
        row.iter_mut().for_each(|v| *v /= n);
    }
    let row = |i: usize| &x[i * dim..(i + 1) * dim];

    let mut rng = seeded_rng(seed);
    let mut chosen = vec![rng.random_range(0..m)];
    let mut dist: Vec<f64> = (0..m)
        .map(|i| (1.0 - dot(row(i), row(chosen[0]))).max(0.0))
        .collect();
    while chosen.len() < k {
        let total: f64 = dist.iter().sum();
        let next = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &d) in dist.iter().enumerate() {
                acc += d;
                if d > 0.0 && acc > target {
                    pick = Some(i);
                    break;
                }
            }
            // Rounding can leave `target` just past the running sum.
            pick.unwrap_or_else(|| dist.iter().rposition(|&d| d > 0.0).unwrap())
        } else {
            (0..m).find(|i| !chosen.contains(i)).unwrap()
        };
        chosen.push(next);
        for (i, d) in dist.iter_mut().enumerate() {
            *d = d.min((1.0 - dot(row(i), row(next))).max(0.0));
        }
    }
    let mut centroids: Vec<f64> = chosen.iter().flat_map(|&i| row(i).to_vec()).collect();

    let mut assignments = vec![usize::MAX; m];
    let mut objective_trace = Vec::new();
    for _ in 0..KMEANS_MAX_ITERATIONS {
        let mut changed = false;
        let mut objective = 0.0;
        let mut best_sim = vec![0.0; m];
        for i in 0..m {
            let (best, sim) = (0..k)
                .map(|c| (c, dot(row(i), &centroids[c * dim..(c + 1) * dim])))
                .fold((0, f64::NEG_INFINITY), |acc, cur| {
                    if cur.1 > acc.1 {
                        cur
                    } else {
                        acc
                    }
                });
            if assignments[i] != best {
                assignments[i] = best;
                changed = true;
            }
            best_sim[i] = sim;
            objective += 1.0 - sim;
        }
        objective_trace.push(objective);
        if !changed {
            break;
        }

        let mut sums = vec![0.0; k * dim];
        let mut sizes = vec![0usize; k];
        for i in 0..m {
            let c = assignments[i];
            sizes[c] += 1;
            for (s, v) in sums[c * dim..(c + 1) * dim].iter_mut().zip(row(i)) {
                *s += v;
            }
        }
        let mut taken = Vec::new();
        for c in 0..k {
            let sum = &sums[c * dim..(c + 1) * dim];
            let n = dot(sum, sum).sqrt();
            let centroid = &mut centroids[c * dim..(c + 1) * dim];
            if sizes[c] > 0 && n > EPS_NORM {
                centroid.iter_mut().zip(sum).for_each(|(o, s)| *o = s / n);
            } else {
                // Farthest point from its own centroid, lowest index on ties.
                let far = (0..m)
                    .filter(|i| !taken.contains(i))
                    .fold(None, |acc: Option<usize>, i| match acc {
                        Some(j) if best_sim[j] <= best_sim[i] => Some(j),
                        _ => Some(i),
                    })
                    .expect("k <= m leaves a point to take");
                taken.push(far);
                centroid.copy_from_slice(row(far));
            }
        }
    }

    Ok(KMeans {
        assignments,
        centroids,
        objective_trace,
    })
}

struct Contingency {
    n: usize,
    rows: Vec<usize>,
    cols: Vec<usize>,
    cells: HashMap<(usize, usize), usize>,
}

impl Contingency {
    fn new(a: &[usize], b: &[usize]) -> Result<Self> {
        if a.len() != b.len() {
            return Err(Error::Labels(format!(
                "partitions cover {} and {} items",
                a.len(),
                b.len()
            )));
        }
        if a.is_empty() {
            return Err(Error::Labels("empty partitions".into()));
        }
        let compact = |p: &[usize]| {
            let mut ids = HashMap::new();
            let labels: Vec<usize> = p
                .iter()
                .map(|&l| {
                    let next = ids.len();
                    *ids.entry(l).or_insert(next)
                })
                .collect();
            (labels, ids.len())
        };
        let (a, ka) = compact(a);
        let (b, kb) = compact(b);
        let mut rows = vec![0; ka];
        let mut cols = vec![0; kb];
        let mut cells = HashMap::new();
        for (&i, &j) in a.iter().zip(&b) {
            rows[i] += 1;
            cols[j] += 1;
            *cells.entry((i, j)).or_insert(0) += 1;
        }
        Ok(Self {
            n: a.len(),
            rows,
            cols,
            cells,
        })
    }

    fn entropy(sizes: &[usize], n: usize) -> f64 {
        let n = n as f64;
        -sizes
            .iter()
            .filter(|&&s| s > 0)
            .map(|&s| {
                let p = s as f64 / n;
                p * p.ln()
            })
            .sum::<f64>()
    }

    fn mutual_information(&self) -> f64 {
        let n = self.n as f64;
        let mut cells: Vec<_> = self.cells.iter().collect();
        cells.sort();
        cells
            .into_iter()
            .map(|(&(i, j), &c)| {
                let c = c as f64;
                c / n * (n * c / (self.rows[i] as f64 * self.cols[j] as f64)).ln()
            })
            .sum::<f64>()
            .max(0.0)
    }

    fn expected_mutual_information(&self) -> f64 {
        let n = self.n;
        let nf = n as f64;
        let lf = |k: usize| ln_gamma(k as f64 + 1.0);
        let mut emi = 0.0;
        for &a in &self.rows {
            for &b in &self.cols {
                let lo = (a + b).saturating_sub(n).max(1);
                let hi = a.min(b);
                let fixed = lf(a) + lf(b) + lf(n - a) + lf(n - b) - lf(n);
                for nij in lo..=hi {
                    let x = nij as f64;
                    let log_p = fixed - lf(nij) - lf(a - nij) - lf(b - nij) - lf(n + nij - a - b);
                    emi += x / nf * (nf * x / (a as f64 * b as f64)).ln() * log_p.exp();
                }
            }
        }
        emi
    }

    /// Same partition up to relabeling.
    fn identical(&self) -> bool {
        self.cells.len() == self.rows.len() && self.cells.len() == self.cols.len()
    }
}

/// Normalized mutual information with arithmetic-mean normalization.
pub fn nmi(assignments: &[usize], labels: &[usize]) -> Result<f64> {
    let c = Contingency::new(assignments, labels)?;
    let (ha, hb) = (
        Contingency::entropy(&c.rows, c.n),
        Contingency::entropy(&c.cols, c.n),
    );
    if ha == 0.0 && hb == 0.0 {
        return Ok(1.0);
    }
    let mean = 0.5 * (ha + hb);
    Ok((c.mutual_information() / mean).clamp(0.0, 1.0))
}

/// Mutual information adjusted for chance, arithmetic-mean normalization.
pub fn ami(assignments: &[usize], labels: &[usize]) -> Result<f64> {
    let c = Contingency::new(assignments, labels)?;
    if c.identical() {
        return Ok(1.0);
    }
    let (ha, hb) = (
        Contingency::entropy(&c.rows, c.n),
        Contingency::entropy(&c.cols, c.n),
    );
    let mi = c.mutual_information();
    let emi = c.expected_mutual_information();
    let denom = 0.5 * (ha + hb) - emi;
    if denom.abs() < 1e-15 {
        return Ok(0.0);
    }
    Ok(((mi - emi) / denom).min(1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::gaussian_vec;

    #[test]
    fn sklearn_reference_values() {
        // Frozen from scikit-learn 1.x with average_method="arithmetic".
        let cases: [(&[usize], &[usize], f64, f64); 3] = [
            (
                &[0, 0, 1, 1, 2, 2, 2, 0],
                &[0, 0, 1, 1, 1, 2, 2, 2],
                0.5588730382170324,
                0.319672650569647,
            ),
            (
                &[0, 1, 0, 1, 0, 1, 2, 2, 2, 0],
                &[1, 1, 0, 0, 1, 1, 0, 0, 2, 2],
                0.23987400199881984,
                -0.03931173043502762,
            ),
            (
                &[0, 0, 0, 1, 1, 1],
                &[0, 0, 1, 1, 2, 2],
                0.5158037429793889,
                0.2987924581708903,
            ),
        ];
        for (a, b, want_nmi, want_ami) in cases {
            assert!((nmi(a, b).unwrap() - want_nmi).abs() < 1e-12, "nmi {a:?}");
            assert!((ami(a, b).unwrap() - want_ami).abs() < 1e-10, "ami {a:?}");
        }
    }

    #[test]
    fn identical_partitions() {
        let p = [3, 3, 1, 1, 7, 7, 7];
        let relabeled = [0, 0, 5, 5, 2, 2, 2];
        assert_eq!(nmi(&p, &relabeled).unwrap(), 1.0);
        assert_eq!(ami(&p, &relabeled).unwrap(), 1.0);
        assert_eq!(nmi(&[0, 0, 1, 1], &[0, 0, 1, 1]).unwrap(), 1.0);
    }

    #[test]
    fn degenerate_entropies() {
        assert_eq!(nmi(&[0, 0, 0], &[4, 4, 4]).unwrap(), 1.0);
        assert_eq!(ami(&[0, 0, 0], &[4, 4, 4]).unwrap(), 1.0);
        assert_eq!(nmi(&[0, 0, 0], &[0, 1, 2]).unwrap(), 0.0);
        assert_eq!(ami(&[0, 0, 0], &[0, 1, 2]).unwrap(), 0.0);
        assert!(nmi(&[0, 1], &[0]).is_err());
    }

    #[test]
    fn independent_partitions_have_zero_ami() {
        let mut rng = seeded_rng(11);
        let a: Vec<usize> = (0..10_000).map(|_| rng.random_range(0..10)).collect();
        let b: Vec<usize> = (0..10_000).map(|_| rng.random_range(0..10)).collect();
        let score = ami(&a, &b).unwrap();
        assert!(score.abs() < 0.02, "{score}");
        assert!(nmi(&a, &b).unwrap() >= score);
    }

    fn two_clusters(per: usize, seed: u64) -> EmbeddingSet {
        let mut rng = seeded_rng(seed);
        let noise = gaussian_vec(&mut rng, 2 * per * 4, 0.05);
        let rows: Vec<Vec<f64>> = (0..2 * per)
            .map(|i| {
                let sign = if i < per { 1.0 } else { -1.0 };
                let mut v: Vec<f64> = noise[i * 4..(i + 1) * 4].to_vec();
                v[0] += sign;
                v
            })
            .collect();
        EmbeddingSet::from_rows(&rows, None).unwrap()
    }

    #[test]
    fn antipodal_clusters_separate() {
        let e = two_clusters(20, 1);
        let km = kmeans(&e, 2, 0).unwrap();
        let truth: Vec<usize> = (0..40).map(|i| i / 20).collect();
        assert_eq!(nmi(&km.assignments, &truth).unwrap(), 1.0);
    }

    #[test]
    fn k_equals_m_gives_singletons() {
        let e = two_clusters(4, 2);
        let km = kmeans(&e, 8, 3).unwrap();
        let mut sorted = km.assignments.clone();
        sorted.sort();
        assert_eq!(sorted, (0..8).collect::<Vec<_>>());
    }

    #[test]
    fn objective_never_increases_and_is_deterministic() {
        let mut rng = seeded_rng(5);
        let e = EmbeddingSet::new(6, gaussian_vec(&mut rng, 300 * 6, 1.0), None).unwrap();
        let km = kmeans(&e, 7, 9).unwrap();
        for w in km.objective_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-9, "{:?}", km.objective_trace);
        }
        assert_eq!(km, kmeans(&e, 7, 9).unwrap());
        assert!(kmeans(&e, 0, 0).is_err());
        assert!(kmeans(&e, 301, 0).is_err());
    }
}

//! Upper-bound baseline: fit `U` directly on labeled image embeddings with
//! a normalized softmax loss over unit-norm class prototypes.
//!
//! For projected images `v'ᵢ` and prototypes `cⱼ` the logits are `v'ᵢ · cⱼ`
//! (no temperature) and the loss is the mean negative log-softmax of each
//! item's own class. Prototypes are renormalized after every Adam step.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::embedding_store::{EmbeddingSet, LabelSet};
use crate::error::{Error, Result};
use crate::hypersphere::{TransformMatrix, TransformMethod, EPS_NORM};
use crate::indirect::{normalized_rows, FitResult};
use crate::optimizer::{minimize, TrainConfig};
use crate::rng::{gaussian_vec, seeded_rng};

const INIT_STDDEV: f64 = 0.1;

/// One unit-length `r'`-dimensional prototype per class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassPrototypes {
    classes: Vec<String>,
    dim: usize,
    vectors: Vec<f64>,
}

impl ClassPrototypes {
    /// Normalizes each row of `vectors` (row-major, `classes.len() × dim`).
    pub fn new(classes: Vec<String>, dim: usize, mut vectors: Vec<f64>) -> Result<Self> {
        if vectors.len() != classes.len() * dim {
            return Err(Error::DimensionMismatch {
                expected: classes.len() * dim,
                actual: vectors.len(),
            });
        }
        for (j, row) in vectors.chunks_exact_mut(dim).enumerate() {
            let n = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            if !(n > EPS_NORM) {
                return Err(Error::DegenerateRow {
                    row: format!("prototype {}", classes[j]),
                });
            }
            row.iter_mut().for_each(|x| *x /= n);
        }
        Ok(Self {
            classes,
            dim,
            vectors,
        })
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vector(&self, j: usize) -> &[f64] {
        &self.vectors[j * self.dim..(j + 1) * self.dim]
    }

    fn matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.classes.len(), self.dim, &self.vectors)
    }
}

/// A trained oracle: the projection and the prototypes learned with it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleModel {
    pub transform: TransformMatrix,
    pub prototypes: ClassPrototypes,
}

/// Class index of every row of `v` with respect to `classes`.
fn class_targets(v: &EmbeddingSet, labels: &LabelSet, classes: &[String]) -> Result<Vec<usize>> {
    let to_prototype = labels
        .classes()
        .into_iter()
        .map(|c| {
            classes
                .iter()
                .position(|p| *p == c)
                .ok_or_else(|| Error::Labels(format!("class {c:?} has no prototype")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(labels
        .align(v)?
        .into_iter()
        .map(|i| to_prototype[i])
        .collect())
}

/// Mean negative log-softmax loss and, optionally, gradients for `U` and the prototypes.
fn loss_and_gradient(
    vn: &DMatrix<f64>,
    targets: &[usize],
    u: &DMatrix<f64>,
    protos: &DMatrix<f64>,
    names: &dyn Fn(usize) -> String,
    with_gradient: bool,
) -> Result<(f64, Option<(DMatrix<f64>, DMatrix<f64>)>)> {
    let m = vn.nrows();
    let mut p = vn * u;
    let mut norms = Vec::with_capacity(m);
    for (i, mut row) in p.row_iter_mut().enumerate() {
        let n = row.norm();
        if !(n > EPS_NORM) {
            return Err(Error::DegenerateRow { row: names(i) });
        }
        row /= n;
        norms.push(n);
    }
    let mut probs = &p * protos.transpose();
    let mut loss = 0.0;
    for (i, mut row) in probs.row_iter_mut().enumerate() {
        let max = row.max();
        row.apply(|z| *z = (*z - max).exp());
        let sum = row.sum();
        loss += (sum.ln() + max) - (row[targets[i]].ln() + max);
        row /= sum;
    }
    let loss = loss / m as f64;
    if !with_gradient {
        return Ok((loss, None));
    }

    // ∂L/∂logits = (softmax - onehot) / m
    let mut dz = probs;
    for (i, &t) in targets.iter().enumerate() {
        dz[(i, t)] -= 1.0;
    }
    dz /= m as f64;
    let grad_protos = dz.transpose() * &p;
    let mut dp = &dz * protos;
    for (i, mut row) in dp.row_iter_mut().enumerate() {
        let along = row.dot(&p.row(i));
        row -= p.row(i) * along;
        row /= norms[i];
    }
    let grad_u = vn.transpose() * dp;
    Ok((loss, Some((grad_u, grad_protos))))
}

fn check_dims(u: &TransformMatrix, prototypes: &ClassPrototypes, v: &EmbeddingSet) -> Result<()> {
    if v.dim() != u.rows() {
        return Err(Error::DimensionMismatch {
            expected: u.rows(),
            actual: v.dim(),
        });
    }
    if prototypes.dim() != u.cols() {
        return Err(Error::DimensionMismatch {
            expected: u.cols(),
            actual: prototypes.dim(),
        });
    }
    Ok(())
}

pub fn oracle_loss(
    u: &TransformMatrix,
    prototypes: &ClassPrototypes,
    v: &EmbeddingSet,
    labels: &LabelSet,
) -> Result<f64> {
    check_dims(u, prototypes, v)?;
    let targets = class_targets(v, labels, prototypes.classes())?;
    let vn = normalized_rows(v)?;
    let names = |i| v.row_name(i);
    Ok(loss_and_gradient(
        &vn,
        &targets,
        &u.to_matrix(),
        &prototypes.matrix(),
        &names,
        false,
    )?
    .0)
}

/// Jointly fits `U` and the class prototypes on labeled images.
pub fn fit_oracle(
    v: &EmbeddingSet,
    labels: &LabelSet,
    target_dim: usize,
    seed: u64,
) -> Result<FitResult<OracleModel>> {
    fit_oracle_with(v, labels, target_dim, seed, &TrainConfig::default())
}

pub fn fit_oracle_with(
    v: &EmbeddingSet,
    labels: &LabelSet,
    target_dim: usize,
    seed: u64,
    config: &TrainConfig,
) -> Result<FitResult<OracleModel>> {
    let (r, rp) = (v.dim(), target_dim);
    if v.count() < 2 {
        return Err(Error::Config("the oracle needs at least two items".into()));
    }
    if rp == 0 || rp > r {
        return Err(Error::Config(format!(
            "target dimension {rp} must lie in 1..={r}"
        )));
    }
    let classes = labels.classes();
    let targets = class_targets(v, labels, &classes)?;
    let c = classes.len();

    // U is drawn first so it matches the untrained random transform for this seed.
    let mut rng = seeded_rng(seed);
    let mut params = gaussian_vec(&mut rng, r * rp, INIT_STDDEV);
    let init_protos =
        ClassPrototypes::new(classes.clone(), rp, gaussian_vec(&mut rng, c * rp, 1.0))?;
    params.extend_from_slice(&init_protos.vectors);
    let split = r * rp;

    let vn = normalized_rows(v)?;
    let names = |i| v.row_name(i);
    let min = minimize(
        params,
        config,
        |flat| {
            let u = DMatrix::from_row_slice(r, rp, &flat[..split]);
            let protos = DMatrix::from_row_slice(c, rp, &flat[split..]);
            let (loss, grads) = loss_and_gradient(&vn, &targets, &u, &protos, &names, true)?;
            let (gu, gp) = grads.expect("gradient requested");
            let mut g = gu.transpose().as_slice().to_vec();
            g.extend_from_slice(gp.transpose().as_slice());
            Ok((loss, g))
        },
        |flat| {
            for row in flat[split..].chunks_exact_mut(rp) {
                let n = row.iter().map(|x| x * x).sum::<f64>().sqrt();
                if n > EPS_NORM {
                    row.iter_mut().for_each(|x| *x /= n);
                }
            }
        },
    )?;

    let mut transform = TransformMatrix::new(
        r,
        rp,
        min.params[..split].to_vec(),
        TransformMethod::Oracle,
        seed,
    )?;
    transform.loss_trace = Some(min.trace.clone());
    let prototypes = ClassPrototypes {
        classes,
        dim: rp,
        vectors: min.params[split..].to_vec(),
    };
    Ok(FitResult {
        model: OracleModel {
            transform,
            prototypes,
        },
        final_loss: min.loss,
        iterations: min.iterations,
        loss_trace: min.trace,
    })
}

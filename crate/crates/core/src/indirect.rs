//! Learning a projection from text-prompt embeddings.
//!
//! Each prompt embedding `t` is normalized, projected through `U` to
//! `r'` dimensions and renormalized, then mapped back through `Uᵀ` and
//! renormalized again. The loss is the mean arc length between every
//! normalized prompt and its reconstruction, so `U` is pushed towards the
//! directions along which the prompts vary.
//!
//! The gradient is derived by hand. Writing `a = tU`, `p = a/‖a‖`,
//! `b = pUᵀ`, `q = b/‖b‖`, `c = t·q` and `ℓ = arccos c`:
//!
//! ```text
//! ∂ℓ/∂b = -(1-c²)^(-1/2) · (t - c q) / ‖b‖
//! ∂ℓ/∂p = (∂ℓ/∂b) U
//! ∂ℓ/∂a = (∂ℓ/∂p - (∂ℓ/∂p · p) p) / ‖a‖
//! ∂ℓ/∂U = (∂ℓ/∂b)ᵀ p + tᵀ (∂ℓ/∂a)
//! ```

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::baselines::random_transform;
use crate::embedding_store::EmbeddingSet;
use crate::error::{Error, Result};
use crate::hypersphere::{TransformMatrix, TransformMethod, EPS_NORM};
use crate::optimizer::{minimize, AdamConfig, TrainConfig, MAX_ITERATIONS};

/// Rows whose cosine with their reconstruction is within this of ±1 get no gradient.
pub const EPS_COS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IndirectConfig {
    pub target_dim: usize,
    pub lr: f64,
    pub patience: usize,
    pub seed: u64,
    pub init_stddev: f64,
    pub max_iterations: usize,
}

impl Default for IndirectConfig {
    fn default() -> Self {
        Self {
            target_dim: 128,
            lr: 0.01,
            patience: 100,
            seed: 0,
            init_stddev: 0.1,
            max_iterations: MAX_ITERATIONS,
        }
    }
}

impl IndirectConfig {
    pub fn new(target_dim: usize, seed: u64) -> Self {
        Self {
            target_dim,
            seed,
            ..Self::default()
        }
    }

    fn train_config(&self) -> TrainConfig {
        TrainConfig {
            adam: AdamConfig {
                lr: self.lr,
                ..AdamConfig::default()
            },
            patience: self.patience,
            max_iterations: self.max_iterations,
        }
    }
}

/// A trained model together with its optimization record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult<M = TransformMatrix> {
    pub model: M,
    /// Loss of the returned parameters, the lowest value in `loss_trace`.
    pub final_loss: f64,
    pub iterations: usize,
    pub loss_trace: Vec<(usize, f64)>,
}

/// Rows of `t` scaled to unit length, as an `n × r` matrix.
pub(crate) fn normalized_rows(t: &EmbeddingSet) -> Result<DMatrix<f64>> {
    let mut m = DMatrix::from_row_slice(t.count(), t.dim(), t.data());
    for (i, mut row) in m.row_iter_mut().enumerate() {
        let n = row.norm();
        if !(n > EPS_NORM) {
            return Err(Error::DegenerateRow { row: t.row_name(i) });
        }
        row /= n;
    }
    Ok(m)
}

/// Divides every row by its norm, failing on degenerate rows.
fn normalize_rows_in_place(
    m: &mut DMatrix<f64>,
    names: &dyn Fn(usize) -> String,
) -> Result<Vec<f64>> {
    let mut norms = Vec::with_capacity(m.nrows());
    for (i, mut row) in m.row_iter_mut().enumerate() {
        let n = row.norm();
        if !(n > EPS_NORM) {
            return Err(Error::DegenerateRow { row: names(i) });
        }
        row /= n;
        norms.push(n);
    }
    Ok(norms)
}

/// Loss of `u` on pre-normalized rows `tn` and, optionally, its gradient.
pub(crate) fn loss_and_gradient(
    tn: &DMatrix<f64>,
    u: &DMatrix<f64>,
    names: &dyn Fn(usize) -> String,
    with_gradient: bool,
) -> Result<(f64, Option<DMatrix<f64>>)> {
    let n = tn.nrows();
    let mut p = tn * u;
    let a_norms = normalize_rows_in_place(&mut p, names)?;
    let mut q = &p * u.transpose();
    let b_norms = normalize_rows_in_place(&mut q, names)?;

    let cosines: Vec<f64> = (0..n)
        .map(|i| tn.row(i).dot(&q.row(i)).clamp(-1.0, 1.0))
        .collect();
    let loss = cosines.iter().map(|c| c.acos()).sum::<f64>() / n as f64;
    if !with_gradient {
        return Ok((loss, None));
    }

    // ∂L/∂b, one row per prompt.
    let mut gb = DMatrix::zeros(n, tn.ncols());
    for (i, &c) in cosines.iter().enumerate() {
        if c.abs() >= 1.0 - EPS_COS {
            continue;
        }
        let w = -1.0 / ((1.0 - c * c).sqrt() * n as f64 * b_norms[i]);
        let row = (tn.row(i) - q.row(i) * c) * w;
        gb.set_row(i, &row);
    }
    let mut grad = gb.transpose() * &p;

    let mut ga = &gb * u;
    for (i, mut row) in ga.row_iter_mut().enumerate() {
        let along = row.dot(&p.row(i));
        row -= p.row(i) * along;
        row /= a_norms[i];
    }
    grad += tn.transpose() * ga;
    Ok((loss, Some(grad)))
}

fn check_shapes(u: &TransformMatrix, t: &EmbeddingSet) -> Result<()> {
    if t.dim() != u.rows() {
        return Err(Error::DimensionMismatch {
            expected: u.rows(),
            actual: t.dim(),
        });
    }
    Ok(())
}

/// Mean arc length between each normalized row of `t` and its reconstruction through `u`.
pub fn indirect_loss(u: &TransformMatrix, t: &EmbeddingSet) -> Result<f64> {
    check_shapes(u, t)?;
    let tn = normalized_rows(t)?;
    let names = |i| t.row_name(i);
    Ok(loss_and_gradient(&tn, &u.to_matrix(), &names, false)?.0)
}

/// Analytic gradient of [`indirect_loss`] with respect to `u`, shaped `r × r'`.
pub fn indirect_loss_gradient(u: &TransformMatrix, t: &EmbeddingSet) -> Result<DMatrix<f64>> {
    check_shapes(u, t)?;
    let tn = normalized_rows(t)?;
    let names = |i| t.row_name(i);
    let (_, grad) = loss_and_gradient(&tn, &u.to_matrix(), &names, true)?;
    Ok(grad.expect("gradient requested"))
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

/// Fits `U` to the prompt embeddings `t` with full-batch Adam and early stopping.
///
/// `U` starts from i.i.d. `N(0, init_stddev²)` entries drawn from `config.seed`;
/// with the default standard deviation this is exactly
/// [`random_transform`]`(r, r', seed)`.
pub fn fit_indirect(t: &EmbeddingSet, config: &IndirectConfig) -> Result<FitResult> {
    let (r, r_prime) = (t.dim(), config.target_dim);
    if r_prime == 0 || r_prime > r {
        return Err(Error::Config(format!(
            "target dimension {r_prime} must lie in 1..={r}"
        )));
    }
    if !(config.init_stddev > 0.0) || !(config.lr > 0.0) || config.patience == 0 {
        return Err(Error::Config(
            "init_stddev, lr and patience must be positive".into(),
        ));
    }

    let init = random_transform(r, r_prime, config.seed)?;
    let scale = config.init_stddev / crate::baselines::RANDOM_TRANSFORM_STDDEV;
    let params: Vec<f64> = init.values().iter().map(|v| v * scale).collect();

    let tn = normalized_rows(t)?;
    let names = |i| t.row_name(i);
    let min = minimize(
        params,
        &config.train_config(),
        |flat| {
            let u = DMatrix::from_row_slice(r, r_prime, flat);
            let (loss, grad) = loss_and_gradient(&tn, &u, &names, true)?;
            Ok((loss, row_major(&grad.expect("gradient requested"))))
        },
        |_| {},
    )?;

    let mut model = TransformMatrix::new(
        r,
        r_prime,
        min.params,
        TransformMethod::Indirect,
        config.seed,
    )?;
    model.loss_trace = Some(min.trace.clone());
    Ok(FitResult {
        model,
        final_loss: min.loss,
        iterations: min.iterations,
        loss_trace: min.trace,
    })
}

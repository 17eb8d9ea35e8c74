//! Adam with bias correction, early stopping, and the full-batch training
//! loop shared by every trainer in the crate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Hard cap on iterations, independent of early stopping.
pub const MAX_ITERATIONS: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment estimates for one flat parameter block.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
}

impl AdamState {
    pub fn new(len: usize, config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            first_moment: vec![0.0; len],
            second_moment: vec![0.0; len],
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.first_moment
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.second_moment
    }

    /// Applies one Adam update to `params` in place.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        let len = self.first_moment.len();
        if params.len() != len {
            return Err(Error::DimensionMismatch {
                expected: len,
                actual: params.len(),
            });
        }
        if grads.len() != len {
            return Err(Error::DimensionMismatch {
                expected: len,
                actual: grads.len(),
            });
        }
        if let Some(index) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGradient { index });
        }

        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let t = self.step as i32;
        let bias1 = 1.0 - beta1.powi(t);
        let bias2 = 1.0 - beta2.powi(t);
        for (((p, &g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(&mut self.first_moment)
            .zip(&mut self.second_moment)
        {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / bias1;
            let v_hat = *v / bias2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}

/// Signals a stop after `patience` consecutive checks without a strictly lower loss.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopMonitor {
    patience: usize,
    best_loss: f64,
    since_improvement: usize,
}

impl EarlyStopMonitor {
    pub fn new(patience: usize) -> Self {
        assert!(patience > 0, "patience must be positive");
        Self {
            patience,
            best_loss: f64::INFINITY,
            since_improvement: 0,
        }
    }

    pub fn best_loss(&self) -> f64 {
        self.best_loss
    }

    pub fn iterations_since_improvement(&self) -> usize {
        self.since_improvement
    }

    /// Records `loss`; returns `true` once training should stop.
    pub fn check(&mut self, loss: f64) -> Result<bool> {
        if loss.is_nan() {
            return Err(Error::NonFiniteLoss);
        }
        if loss < self.best_loss {
            self.best_loss = loss;
            self.since_improvement = 0;
        } else {
            self.since_improvement += 1;
        }
        Ok(self.since_improvement >= self.patience)
    }
}

/// Settings shared by the Adam-trained fits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    pub patience: usize,
    pub max_iterations: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            adam: AdamConfig::default(),
            patience: 100,
            max_iterations: MAX_ITERATIONS,
        }
    }
}

/// Outcome of [`minimize`].
#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub params: Vec<f64>,
    pub loss: f64,
    /// Number of loss evaluations performed.
    pub iterations: usize,
    pub trace: Vec<(usize, f64)>,
}

/// Full-batch Adam on `objective` starting from `params`.
///
/// `objective` returns the loss and its gradient at the given parameters.
/// `project`, when given, runs after every update (e.g. to restore a norm
/// constraint). The loss is evaluated once per iteration and recorded in
/// the trace; the parameters with the lowest loss seen are returned.
pub fn minimize<F, P>(
    mut params: Vec<f64>,
    config: &TrainConfig,
    mut objective: F,
    mut project: P,
) -> Result<Minimum>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
    P: FnMut(&mut [f64]),
{
    let mut adam = AdamState::new(params.len(), config.adam);
    let mut monitor = EarlyStopMonitor::new(config.patience);
    let mut trace = Vec::new();
    let mut best: Option<(f64, Vec<f64>)> = None;

    for iteration in 0..config.max_iterations.max(1) {
        let (loss, grad) = match objective(&params) {
            Ok(v) => v,
            Err(e @ (Error::DegenerateRow { .. } | Error::DegenerateDirection { .. })) => {
                return Err(e)
            }
            Err(_) => return Err(Error::Diverged { trace }),
        };
        if !loss.is_finite() {
            return Err(Error::Diverged { trace });
        }
        trace.push((iteration, loss));
        if best.as_ref().is_none_or(|(b, _)| loss < *b) {
            best = Some((loss, params.clone()));
        }
        if monitor.check(loss)? {
            break;
        }
        if adam.step(&mut params, &grad).is_err() {
            return Err(Error::Diverged { trace });
        }
        project(&mut params);
    }

    let (loss, params) = best.expect("at least one iteration runs");
    Ok(Minimum {
        params,
        loss,
        iterations: trace.len(),
        trace,
    })
}

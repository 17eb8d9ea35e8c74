//! Linear and nonlinear autoencoders trained on normalized prompt embeddings.
//!
//! Both use the summed squared reconstruction error
//! `Σᵢ Σⱼ (xᵢⱼ - x̂ᵢⱼ)²` and row-vector layers `y = x W + b`.
//! Only the encoder is used at inference time, and its output is not
//! renormalized.

use nalgebra::{DMatrix, DVector, RowDVector};
use serde::{Deserialize, Serialize};

use crate::embedding_store::EmbeddingSet;
use crate::error::{Error, Result};
use crate::indirect::{normalized_rows, FitResult};
use crate::optimizer::{minimize, TrainConfig};
use crate::rng::{gaussian_vec, seeded_rng};

const INIT_STDDEV: f64 = 0.1;

/// An affine layer `x ↦ x W + b` with `W` stored row-major (`input × output`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub input: usize,
    pub output: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    fn weight_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.input, self.output, &self.weight)
    }

    fn forward(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut y = x * self.weight_matrix();
        let b = RowDVector::from_row_slice(&self.bias);
        for mut row in y.row_iter_mut() {
            row += &b;
        }
        y
    }
}

/// Linear autoencoder: encoder holds `W1 (r × r'), b1`, decoder holds `W2 (r' × r), b2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaeParams {
    pub encoder: Dense,
    pub decoder: Dense,
}

/// Nonlinear autoencoder: `r → hidden → r'` and `r' → hidden → r`, leaky ReLU
/// after the first layer of each side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AeParams {
    pub encoder: [Dense; 2],
    pub decoder: [Dense; 2],
    pub negative_slope: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AeConfig {
    pub hidden: usize,
    pub negative_slope: f64,
    /// L2 coefficient on weight matrices, added to their gradient each step.
    pub weight_decay: f64,
    pub train: TrainConfig,
}

impl Default for AeConfig {
    fn default() -> Self {
        Self {
            hidden: 512,
            negative_slope: 0.01,
            weight_decay: 1e-2,
            train: TrainConfig::default(),
        }
    }
}

/// Layer stack shared by both models while training.
struct Net {
    shapes: Vec<(usize, usize)>,
    activated: Vec<bool>,
    slope: f64,
}

impl Net {
    fn param_count(&self) -> usize {
        self.shapes.iter().map(|(i, o)| i * o + o).sum()
    }

    fn init(&self, seed: u64) -> Vec<f64> {
        let mut rng = seeded_rng(seed);
        let mut params = Vec::with_capacity(self.param_count());
        for &(i, o) in &self.shapes {
            params.extend(gaussian_vec(&mut rng, i * o, INIT_STDDEV));
            params.extend(std::iter::repeat_n(0.0, o));
        }
        params
    }

    fn unpack(&self, flat: &[f64]) -> Vec<Dense> {
        let mut offset = 0;
        self.shapes
            .iter()
            .map(|&(input, output)| {
                let w = input * output;
                let layer = Dense {
                    input,
                    output,
                    weight: flat[offset..offset + w].to_vec(),
                    bias: flat[offset + w..offset + w + output].to_vec(),
                };
                offset += w + output;
                layer
            })
            .collect()
    }

    /// Summed squared reconstruction error plus `decay/2 · Σ W²`, and the gradient.
    fn loss_and_gradient(&self, flat: &[f64], x: &DMatrix<f64>, decay: f64) -> (f64, Vec<f64>) {
        let layers = self.unpack(flat);
        let slope = self.slope;
        let mut inputs = Vec::with_capacity(layers.len());
        let mut pre = Vec::with_capacity(layers.len());
        let mut z = x.clone();
        for (layer, &act) in layers.iter().zip(&self.activated) {
            let y = layer.forward(&z);
            inputs.push(z);
            z = if act {
                y.map(|v| if v > 0.0 { v } else { slope * v })
            } else {
                y.clone()
            };
            pre.push(y);
        }
        let residual = &z - x;
        let mut loss = residual.norm_squared();
        let mut dz = residual * 2.0;

        let mut grads: Vec<Vec<f64>> = vec![Vec::new(); layers.len()];
        for l in (0..layers.len()).rev() {
            if self.activated[l] {
                dz.zip_apply(&pre[l], |g, v| {
                    if v <= 0.0 {
                        *g *= slope
                    }
                });
            }
            let w = layers[l].weight_matrix();
            let mut dw = inputs[l].transpose() * &dz;
            if decay > 0.0 {
                loss += 0.5 * decay * w.norm_squared();
                dw += &w * decay;
            }
            let db: DVector<f64> = dz.row_sum().transpose();
            let mut g = dw.transpose().as_slice().to_vec();
            g.extend(db.iter());
            grads[l] = g;
            if l > 0 {
                dz = &dz * w.transpose();
            }
        }
        (loss, grads.concat())
    }
}

fn check_fit_input(t: &EmbeddingSet, target_dim: usize) -> Result<()> {
    if t.count() < 2 {
        return Err(Error::Config("autoencoders need at least two rows".into()));
    }
    if target_dim == 0 || target_dim > t.dim() {
        return Err(Error::Config(format!(
            "target dimension {target_dim} must lie in 1..={}",
            t.dim()
        )));
    }
    Ok(())
}

fn train<M>(
    net: &Net,
    t: &EmbeddingSet,
    seed: u64,
    decay: f64,
    config: &TrainConfig,
    build: impl FnOnce(Vec<Dense>) -> M,
) -> Result<FitResult<M>> {
    let x = normalized_rows(t)?;
    let min = minimize(
        net.init(seed),
        config,
        |p| Ok(net.loss_and_gradient(p, &x, decay)),
        |_| {},
    )?;
    Ok(FitResult {
        model: build(net.unpack(&min.params)),
        final_loss: min.loss,
        iterations: min.iterations,
        loss_trace: min.trace,
    })
}

/// Linear autoencoder with the default optimizer settings.
pub fn fit_lae(t: &EmbeddingSet, target_dim: usize, seed: u64) -> Result<FitResult<LaeParams>> {
    fit_lae_with(t, target_dim, seed, &TrainConfig::default())
}

pub fn fit_lae_with(
    t: &EmbeddingSet,
    target_dim: usize,
    seed: u64,
    config: &TrainConfig,
) -> Result<FitResult<LaeParams>> {
    check_fit_input(t, target_dim)?;
    let r = t.dim();
    let net = Net {
        shapes: vec![(r, target_dim), (target_dim, r)],
        activated: vec![false, false],
        slope: 1.0,
    };
    train(&net, t, seed, 0.0, config, |mut layers| {
        let decoder = layers.pop().unwrap();
        let encoder = layers.pop().unwrap();
        LaeParams { encoder, decoder }
    })
}

/// Nonlinear autoencoder with hidden width 512 and weight decay 1e-2.
pub fn fit_ae(t: &EmbeddingSet, target_dim: usize, seed: u64) -> Result<FitResult<AeParams>> {
    fit_ae_with(t, target_dim, seed, &AeConfig::default())
}

pub fn fit_ae_with(
    t: &EmbeddingSet,
    target_dim: usize,
    seed: u64,
    config: &AeConfig,
) -> Result<FitResult<AeParams>> {
    check_fit_input(t, target_dim)?;
    let (r, h) = (t.dim(), config.hidden);
    let net = Net {
        shapes: vec![(r, h), (h, target_dim), (target_dim, h), (h, r)],
        activated: vec![true, false, true, false],
        slope: config.negative_slope,
    };
    train(
        &net,
        t,
        seed,
        config.weight_decay,
        &config.train,
        |layers| {
            let mut it = layers.into_iter();
            let mut next = || it.next().unwrap();
            AeParams {
                encoder: [next(), next()],
                decoder: [next(), next()],
                negative_slope: config.negative_slope,
            }
        },
    )
}

fn leaky(m: DMatrix<f64>, slope: f64) -> DMatrix<f64> {
    m.map(|v| if v > 0.0 { v } else { slope * v })
}

fn normalized_input(v: &EmbeddingSet, dim: usize) -> Result<DMatrix<f64>> {
    if v.dim() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            actual: v.dim(),
        });
    }
    normalized_rows(v)
}

fn to_set(m: DMatrix<f64>, v: &EmbeddingSet) -> Result<EmbeddingSet> {
    EmbeddingSet::new(
        m.ncols(),
        m.transpose().as_slice().to_vec(),
        v.ids().map(<[String]>::to_vec),
    )
}

impl LaeParams {
    pub fn reconstruct(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        self.decoder.forward(&self.encoder.forward(x))
    }

    /// Summed squared reconstruction error on the normalized rows of `t`.
    pub fn reconstruction_loss(&self, t: &EmbeddingSet) -> Result<f64> {
        let x = normalized_input(t, self.encoder.input)?;
        Ok((self.reconstruct(&x) - x).norm_squared())
    }
}

impl AeParams {
    pub fn encode(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let h = leaky(self.encoder[0].forward(x), self.negative_slope);
        self.encoder[1].forward(&h)
    }

    pub fn reconstruct(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let h = leaky(
            self.decoder[0].forward(&self.encode(x)),
            self.negative_slope,
        );
        self.decoder[1].forward(&h)
    }

    pub fn reconstruction_loss(&self, t: &EmbeddingSet) -> Result<f64> {
        let x = normalized_input(t, self.encoder[0].input)?;
        Ok((self.reconstruct(&x) - x).norm_squared())
    }

    pub fn weight_norm_squared(&self) -> f64 {
        self.encoder
            .iter()
            .chain(&self.decoder)
            .flat_map(|l| &l.weight)
            .map(|w| w * w)
            .sum()
    }
}

/// Encodes each normalized row of `v` as `x W1 + b1`.
pub fn transform_lae(v: &EmbeddingSet, params: &LaeParams) -> Result<EmbeddingSet> {
    let x = normalized_input(v, params.encoder.input)?;
    to_set(params.encoder.forward(&x), v)
}

/// Runs each normalized row of `v` through the nonlinear encoder.
pub fn transform_ae(v: &EmbeddingSet, params: &AeParams) -> Result<EmbeddingSet> {
    let x = normalized_input(v, params.encoder[0].input)?;
    to_set(params.encode(&x), v)
}

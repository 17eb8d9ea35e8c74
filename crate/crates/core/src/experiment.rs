//! End-to-end experiments: fit a method per seed, embed the images,
//! evaluate, and aggregate across seeds; plus sweeps over the target
//! dimension or the number of prompts.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::{
    fit_ae_with, fit_lae_with, fit_pca_with, random_transform, random_unit_embeddings, AeConfig,
    PcaOptions,
};
use crate::embedding_store::{read_embeddings, EmbeddingSet, LabelSet};
use crate::error::{Error, Result};
use crate::indirect::{fit_indirect, IndirectConfig};
use crate::metrics::{
    ami, evaluate_retrieval, kmeans, nmi, Metric, MetricSummary, RetrievalReport,
};
use crate::model::Model;
use crate::optimizer::TrainConfig;
use crate::oracle::fit_oracle_with;
use crate::rng::seeded_rng;

/// Environment variable naming the directory relative data paths resolve against.
pub const DATA_DIR_ENV: &str = "INDIRECT_DATA_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Indirect,
    Pca,
    Lae,
    Ae,
    RandomTransform,
    RandomEmbedding,
    ClipPassthrough,
    Oracle,
}

impl Method {
    pub const ALL: [Method; 8] = [
        Method::Indirect,
        Method::Pca,
        Method::Lae,
        Method::Ae,
        Method::RandomTransform,
        Method::RandomEmbedding,
        Method::ClipPassthrough,
        Method::Oracle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Indirect => "indirect",
            Method::Pca => "pca",
            Method::Lae => "lae",
            Method::Ae => "ae",
            Method::RandomTransform => "random-transform",
            Method::RandomEmbedding => "random-embedding",
            Method::ClipPassthrough => "clip-passthrough",
            Method::Oracle => "oracle",
        }
    }

    pub fn needs_text(self) -> bool {
        matches!(
            self,
            Method::Indirect | Method::Pca | Method::Lae | Method::Ae
        )
    }

    pub fn needs_images(self) -> bool {
        self != Method::RandomEmbedding
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown method {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "axis", content = "values", rename_all = "kebab-case")]
pub enum SweepAxis {
    TargetDim(Vec<usize>),
    PromptCount(Vec<usize>),
}

fn default_target_dim() -> usize {
    128
}

fn default_seeds() -> Vec<u64> {
    (0..5).collect()
}

fn default_metrics() -> Vec<Metric> {
    Metric::ALL.to_vec()
}

fn default_ae_hidden() -> usize {
    512
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub method: Method,
    #[serde(default)]
    pub text_emb: Option<PathBuf>,
    #[serde(default)]
    pub img_emb: Option<PathBuf>,
    #[serde(default)]
    pub labels: Option<PathBuf>,
    #[serde(default = "default_target_dim")]
    pub target_dim: usize,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_metrics")]
    pub metrics: Vec<Metric>,
    /// Train on a random subset of this many prompts, drawn per seed.
    #[serde(default)]
    pub prompt_sample: Option<usize>,
    #[serde(default)]
    pub pca: PcaOptions,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default = "default_ae_hidden")]
    pub ae_hidden: usize,
    #[serde(default)]
    pub sweep: Option<SweepAxis>,
}

impl ExperimentConfig {
    pub fn new(method: Method) -> Self {
        Self {
            method,
            text_emb: None,
            img_emb: None,
            labels: None,
            target_dim: default_target_dim(),
            seeds: default_seeds(),
            metrics: default_metrics(),
            prompt_sample: None,
            pca: PcaOptions::default(),
            train: TrainConfig::default(),
            ae_hidden: default_ae_hidden(),
            sweep: None,
        }
    }
}

/// Inputs of an experiment, already loaded.
#[derive(Debug, Clone, Default)]
pub struct ExperimentData {
    pub text: Option<EmbeddingSet>,
    pub images: Option<EmbeddingSet>,
    pub labels: Option<LabelSet>,
}

/// Resolves `path` against `data_dir` when it is relative.
pub fn resolve_path(path: &Path, data_dir: Option<&Path>) -> PathBuf {
    match data_dir {
        Some(dir) if path.is_relative() => dir.join(path),
        _ => path.to_path_buf(),
    }
}

pub fn load_embeddings(path: &Path) -> Result<EmbeddingSet> {
    let file = File::open(path).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })?;
    read_embeddings(BufReader::new(file))
}

pub fn load_labels(path: &Path) -> Result<LabelSet> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })?;
    LabelSet::parse_tsv(&text)
}

impl ExperimentData {
    /// Loads whichever files `config` names.
    pub fn load(config: &ExperimentConfig, data_dir: Option<&Path>) -> Result<Self> {
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| resolve_path(p, data_dir));
        Ok(Self {
            text: path(&config.text_emb)
                .map(|p| load_embeddings(&p))
                .transpose()?,
            images: path(&config.img_emb)
                .map(|p| load_embeddings(&p))
                .transpose()?,
            labels: path(&config.labels).map(|p| load_labels(&p)).transpose()?,
        })
    }
}

struct Prepared<'a> {
    text: Option<&'a EmbeddingSet>,
    images: Option<&'a EmbeddingSet>,
    labels: &'a LabelSet,
    classes: Vec<usize>,
    class_count: usize,
}

fn validate<'a>(config: &ExperimentConfig, data: &'a ExperimentData) -> Result<Prepared<'a>> {
    let method = config.method;
    if config.seeds.is_empty() {
        return Err(Error::Config("at least one seed is required".into()));
    }
    if config.metrics.is_empty() {
        return Err(Error::Config("at least one metric is required".into()));
    }
    if config.target_dim == 0 {
        return Err(Error::Config("target dimension must be positive".into()));
    }
    let labels = data
        .labels
        .as_ref()
        .ok_or_else(|| Error::Config("evaluation needs a label file".into()))?;
    if method.needs_text() && data.text.is_none() {
        return Err(Error::Config(format!(
            "{} needs text embeddings",
            method.name()
        )));
    }
    if method.needs_images() && data.images.is_none() {
        return Err(Error::Config(format!(
            "{} needs image embeddings",
            method.name()
        )));
    }
    if let (Some(text), Some(images)) = (&data.text, &data.images) {
        if method.needs_text() && text.dim() != images.dim() {
            return Err(Error::Config(format!(
                "text embeddings have dimension {}, images {}",
                text.dim(),
                images.dim()
            )));
        }
    }
    let reduces = !matches!(method, Method::ClipPassthrough | Method::RandomEmbedding);
    if reduces {
        let r = data.images.as_ref().map(|i| i.dim()).unwrap_or(0);
        if config.target_dim > r {
            return Err(Error::Config(format!(
                "target dimension {} exceeds input dimension {r}",
                config.target_dim
            )));
        }
    }
    let text_rows = match (config.prompt_sample, &data.text) {
        (Some(k), Some(text)) => {
            if k == 0 || k > text.count() {
                return Err(Error::Config(format!(
                    "prompt sample {k} must lie in 1..={}",
                    text.count()
                )));
            }
            k
        }
        (_, Some(text)) => text.count(),
        _ => 0,
    };
    if method == Method::Pca && config.target_dim >= text_rows {
        return Err(Error::PcaNotApplicable {
            target_dim: config.target_dim,
            count: text_rows,
        });
    }

    let classes = match (&data.images, method) {
        (_, Method::RandomEmbedding) | (None, _) => labels.class_indices(),
        (Some(images), _) => labels.align(images)?,
    };
    Ok(Prepared {
        text: data.text.as_ref(),
        images: data.images.as_ref(),
        labels,
        class_count: labels.classes().len(),
        classes,
    })
}

/// The prompts a given seed trains on.
fn prompt_subset(
    text: &EmbeddingSet,
    sample_size: Option<usize>,
    seed: u64,
) -> Result<EmbeddingSet> {
    match sample_size {
        None => Ok(text.clone()),
        Some(k) => {
            let mut rng = seeded_rng(seed);
            rng.set_stream(1);
            let mut idx = sample(&mut rng, text.count(), k).into_vec();
            idx.sort_unstable();
            text.select(&idx)
        }
    }
}

/// Fits the configured method for one seed; `None` for methods with nothing to fit.
pub fn fit_model(
    config: &ExperimentConfig,
    text: Option<&EmbeddingSet>,
    images: Option<&EmbeddingSet>,
    labels: Option<&LabelSet>,
    seed: u64,
) -> Result<Option<Model>> {
    let dim = config.target_dim;
    let method = config.method;
    fn need<'a>(
        t: Option<&'a EmbeddingSet>,
        method: Method,
        what: &str,
    ) -> Result<&'a EmbeddingSet> {
        t.ok_or_else(|| Error::Config(format!("{} needs {what}", method.name())))
    }
    Ok(Some(match config.method {
        Method::Indirect => {
            let text = prompt_subset(
                need(text, method, "text embeddings")?,
                config.prompt_sample,
                seed,
            )?;
            let indirect = IndirectConfig {
                target_dim: dim,
                lr: config.train.adam.lr,
                patience: config.train.patience,
                seed,
                max_iterations: config.train.max_iterations,
                ..IndirectConfig::default()
            };
            Model::Projection {
                transform: fit_indirect(&text, &indirect)?.model,
            }
        }
        Method::Pca => {
            let text = prompt_subset(
                need(text, method, "text embeddings")?,
                config.prompt_sample,
                seed,
            )?;
            Model::Projection {
                transform: fit_pca_with(&text, dim, config.pca)?.transform,
            }
        }
        Method::Lae => {
            let text = prompt_subset(
                need(text, method, "text embeddings")?,
                config.prompt_sample,
                seed,
            )?;
            Model::Lae {
                params: fit_lae_with(&text, dim, seed, &config.train)?.model,
            }
        }
        Method::Ae => {
            let text = prompt_subset(
                need(text, method, "text embeddings")?,
                config.prompt_sample,
                seed,
            )?;
            let ae = AeConfig {
                hidden: config.ae_hidden,
                train: config.train,
                ..AeConfig::default()
            };
            Model::Ae {
                params: fit_ae_with(&text, dim, seed, &ae)?.model,
            }
        }
        Method::RandomTransform => Model::Projection {
            transform: random_transform(
                need(images, method, "image embeddings")?.dim(),
                dim,
                seed,
            )?,
        },
        Method::Oracle => {
            let labels = labels.ok_or_else(|| Error::Config("oracle needs labels".into()))?;
            Model::Oracle {
                model: fit_oracle_with(
                    need(images, method, "image embeddings")?,
                    labels,
                    dim,
                    seed,
                    &config.train,
                )?
                .model,
            }
        }
        Method::RandomEmbedding | Method::ClipPassthrough => return Ok(None),
    }))
}

type SeedOutcome = (BTreeMap<Metric, f64>, usize);

fn run_seed(config: &ExperimentConfig, data: &Prepared<'_>, seed: u64) -> Result<SeedOutcome> {
    let embeddings = match config.method {
        Method::RandomEmbedding => {
            random_unit_embeddings(data.classes.len(), config.target_dim, seed)?
        }
        Method::ClipPassthrough => data.images.expect("validated").clone(),
        _ => {
            let model = fit_model(config, data.text, data.images, Some(data.labels), seed)?
                .expect("method has a model");
            model.apply(data.images.expect("validated"))?
        }
    };

    let mut values = BTreeMap::new();
    let mut excluded = 0;
    if config.metrics.iter().any(|m| !m.is_clustering()) {
        let scores = evaluate_retrieval(&embeddings, &data.classes)?;
        excluded = scores.excluded_queries;
        for &m in &config.metrics {
            let v = match m {
                Metric::MapAtR => scores.map_at_r,
                Metric::PrecAt1 => scores.prec_at_1,
                Metric::RPrec => scores.r_prec,
                Metric::Map => scores.map,
                Metric::Mrr => scores.mrr,
                Metric::Ami | Metric::Nmi => continue,
            };
            values.insert(m, v);
        }
    }
    if config.metrics.iter().any(|m| m.is_clustering()) {
        let clusters = kmeans(&embeddings, data.class_count, seed)?;
        for &m in &config.metrics {
            match m {
                Metric::Ami => values.insert(m, ami(&clusters.assignments, &data.classes)?),
                Metric::Nmi => values.insert(m, nmi(&clusters.assignments, &data.classes)?),
                _ => None,
            };
        }
    }
    Ok((values, excluded))
}

fn digest_set(hasher: &mut Sha256, tag: &str, set: Option<&EmbeddingSet>) {
    hasher.update(tag.as_bytes());
    if let Some(set) = set {
        hasher.update((set.count() as u64).to_le_bytes());
        hasher.update((set.dim() as u64).to_le_bytes());
        for v in set.data() {
            hasher.update(v.to_bits().to_le_bytes());
        }
        for id in set.ids().unwrap_or_default() {
            hasher.update(id.as_bytes());
            hasher.update([0]);
        }
    }
}

/// Hash of the configuration and the loaded inputs.
pub fn fingerprint(config: &ExperimentConfig, data: &ExperimentData) -> Result<String> {
    let mut hasher = Sha256::new();
    hasher.update(serde_json::to_vec(config)?);
    digest_set(&mut hasher, "text", data.text.as_ref());
    digest_set(&mut hasher, "images", data.images.as_ref());
    hasher.update(b"labels");
    if let Some(labels) = &data.labels {
        hasher.update(labels.to_tsv().as_bytes());
    }
    Ok(hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect())
}

/// Runs `config` on already-loaded inputs.
pub fn run_experiment_on(
    config: &ExperimentConfig,
    data: &ExperimentData,
) -> Result<RetrievalReport> {
    let prepared = validate(config, data)?;
    let outcomes: Vec<SeedOutcome> = config
        .seeds
        .par_iter()
        .map(|&seed| {
            run_seed(config, &prepared, seed).map_err(|e| Error::Seed {
                seed,
                source: Box::new(e),
            })
        })
        .collect::<Result<_>>()?;

    let metrics = config
        .metrics
        .iter()
        .map(|&m| {
            let runs = outcomes.iter().map(|(v, _)| v[&m]).collect();
            (m, MetricSummary::from_runs(runs))
        })
        .collect();
    Ok(RetrievalReport {
        metrics,
        config: serde_json::to_value(config)?,
        fingerprint: fingerprint(config, data)?,
        excluded_queries: outcomes[0].1,
    })
}

/// Loads the files named in `config` and runs it.
pub fn run_experiment(
    config: &ExperimentConfig,
    data_dir: Option<&Path>,
) -> Result<RetrievalReport> {
    let data = ExperimentData::load(config, data_dir)?;
    run_experiment_on(config, &data)
}

/// Result at one sweep value; failures are kept rather than aborting the sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub value: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub report: Option<RetrievalReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Runs one full experiment per axis value.
pub fn run_sweep(
    config: &ExperimentConfig,
    data: &ExperimentData,
    axis: &SweepAxis,
) -> Vec<SweepPoint> {
    let points: Vec<(usize, ExperimentConfig)> = match axis {
        SweepAxis::TargetDim(values) => values
            .iter()
            .map(|&v| {
                let mut c = config.clone();
                c.target_dim = v;
                c.sweep = None;
                (v, c)
            })
            .collect(),
        SweepAxis::PromptCount(values) => values
            .iter()
            .map(|&v| {
                let mut c = config.clone();
                c.prompt_sample = Some(v);
                c.sweep = None;
                (v, c)
            })
            .collect(),
    };
    points
        .into_par_iter()
        .map(|(value, c)| match run_experiment_on(&c, data) {
            Ok(report) => SweepPoint {
                value,
                report: Some(report),
                error: None,
            },
            Err(e) => SweepPoint {
                value,
                report: None,
                error: Some(e.to_string()),
            },
        })
        .collect()
}

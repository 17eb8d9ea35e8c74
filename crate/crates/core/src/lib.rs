//! Dimensionality reduction for image embeddings trained on text prompts only.
//!
//! A linear map `U: R^r -> R^r'` is learned so that normalized prompt
//! embeddings survive a round trip through the smaller space with minimal
//! angular error. Because text and image embeddings share a space, the map
//! then compresses image embeddings without ever seeing an image.
//!
//! ```
//! use indirect::{fit_indirect, transform_images, EmbeddingSet, IndirectConfig};
//!
//! let prompts = EmbeddingSet::from_rows(
//!     &[&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0], &[1.0, 1.0, 0.0]],
//!     None,
//! )?;
//! let fit = fit_indirect(&prompts, &IndirectConfig::new(2, 0))?;
//! let images = EmbeddingSet::from_rows(&[&[0.5, 0.5, 0.0]], None)?;
//! let reduced = transform_images(&images, &fit.model)?;
//! assert_eq!(reduced.dim(), 2);
//! # Ok::<(), indirect::Error>(())
//! ```

// `!(x > eps)` is deliberate throughout: NaN has to fail those checks.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod embedding_store;
pub mod error;
pub mod experiment;
pub mod hypersphere;
pub mod indirect;
pub mod metrics;
pub mod model;
pub mod optimizer;
pub mod oracle;
pub mod rng;

pub use embedding_store::{
    decode_embeddings, read_embeddings, render_prompts, write_embeddings, EmbeddingSet, LabelSet,
    PromptManifest,
};
pub use error::{Error, ErrorCategory, Result};
pub use experiment::{
    run_experiment, run_experiment_on, run_sweep, ExperimentConfig, ExperimentData, Method,
    SweepAxis, SweepPoint,
};
pub use hypersphere::{
    cosine_similarity, normalize, project, reconstruct, spherical_distance, transform_images,
    TransformMatrix, TransformMethod, UnitVector,
};
pub use indirect::{
    fit_indirect, indirect_loss, indirect_loss_gradient, FitResult, IndirectConfig,
};
pub use metrics::{Metric, MetricSummary, RetrievalReport};
pub use model::Model;
pub use optimizer::{AdamConfig, TrainConfig};

/// The guide in `book/`, compiled so its snippets run as doctests.
#[cfg(doctest)]
pub mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    pub mod introduction {}
    #[doc = include_str!("../../../book/src/embedding-files.md")]
    pub mod embedding_files {}
    #[doc = include_str!("../../../book/src/hypersphere.md")]
    pub mod hypersphere {}
    #[doc = include_str!("../../../book/src/training.md")]
    pub mod training {}
    #[doc = include_str!("../../../book/src/baselines.md")]
    pub mod baselines {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    pub mod evaluation {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    pub mod experiments {}
}

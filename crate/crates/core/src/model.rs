//! Serializable trained models and how each one maps image embeddings.

use serde::{Deserialize, Serialize};

use crate::baselines::{transform_ae, transform_lae, AeParams, LaeParams};
use crate::embedding_store::EmbeddingSet;
use crate::error::Result;
use crate::hypersphere::{transform_images, TransformMatrix};
use crate::oracle::OracleModel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Model {
    /// A projection applied as normalize → `· U` → normalize.
    Projection {
        transform: TransformMatrix,
    },
    Lae {
        params: LaeParams,
    },
    Ae {
        params: AeParams,
    },
    Oracle {
        model: OracleModel,
    },
}

impl Model {
    pub fn apply(&self, images: &EmbeddingSet) -> Result<EmbeddingSet> {
        match self {
            Model::Projection { transform } => transform_images(images, transform),
            Model::Oracle { model } => transform_images(images, &model.transform),
            Model::Lae { params } => transform_lae(images, params),
            Model::Ae { params } => transform_ae(images, params),
        }
    }
}

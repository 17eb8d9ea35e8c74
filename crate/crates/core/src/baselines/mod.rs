//! Embedding producers the learned projection is compared against.

mod autoencoder;
mod pca;
mod random;

pub use autoencoder::{
    fit_ae, fit_ae_with, fit_lae, fit_lae_with, transform_ae, transform_lae, AeConfig, AeParams,
    Dense, LaeParams,
};
pub use pca::{fit_pca, fit_pca_with, PcaFit, PcaOptions};
pub use random::{random_transform, random_unit_embeddings, RANDOM_TRANSFORM_STDDEV};

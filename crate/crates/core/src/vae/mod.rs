//! Variational autoencoders whose amortized guides are refined by SGLD in
//! latent space.

mod data;
mod mlp;
mod model;

pub use data::{load_idx_dataset, pattern_dataset, pattern_prototype, read_idx, PATTERN_SIDE};
pub use mlp::{Activation, Mlp};
pub use model::{
    bayes_classify, bernoulli_log_likelihood, importance_weighted_estimate, test_log_likelihood, train_cvae, train_vae, vae_relbo,
    Classification, Dataset, DecoderTarget, VaeModel, VaeObjective, VaeTrainConfig,
};

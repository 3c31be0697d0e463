//! Variationally inferred sampling.
//!
//! A simple guide `q0` is pushed through `T` differentiable sampler steps
//! and the resulting refined approximation is trained by maximizing its
//! ELBO, with the sampler step size learned alongside the guide.
//!
//! - [`targets`]: log joint densities.
//! - [`samplers`]: SGD, SGLD and Fokker–Planck flow chains.
//! - [`vis`]: refined ELBOs and the training loop.
//! - [`statespace`]: HMM and dynamic linear models with exact
//!   marginalization, forecasting and scoring rules.
//! - [`vae`]: toy VAE, conditional VAE and the Bayes classifier.

mod error;
pub mod samplers;
pub mod statespace;
pub mod targets;
pub mod vae;
pub mod vis;

pub use error::{Result, VisError};

//! Reproducible experiment runner: funnel, HMM, DLM, VAE and conditional
//! VAE runs with per-seed traces, metrics and a manifest that is enough to
//! repeat the run.

pub mod compare;
pub mod config;
pub mod experiments;
pub mod output;

pub use compare::{compare, Better, Comparison};
pub use config::{Experiment, ExperimentConfig, Settings};
pub use output::{read_manifest, run, Manifest, RunOutput};

pub type Result<T, E = CliError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] vis_core::VisError),

    #[error("{0}")]
    Config(String),

    #[error("data file not found: {0}")]
    MissingData(String),

    #[error("no manifest in {0}")]
    MissingManifest(String),

    #[error("{0}")]
    Mismatch(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Json { path: String, message: String },
}

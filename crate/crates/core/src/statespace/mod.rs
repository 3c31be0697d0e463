//! State-space models with exact latent marginalization: a categorical
//! HMM (forward algorithm) and dynamic linear models (Kalman filter), with
//! forecasting and scoring.

pub mod data;
mod dlm;
mod fit;
mod hmm;
pub mod metrics;
mod ssm;

pub use dlm::{dlm_forecast, kalman_log_marginal, DlmPosterior, DlmSpec, ForecastPoint};
pub use fit::{fit_statespace, initial_theta, refine_point, MapObjective, StateSpaceModel, StatespaceConfig, StatespaceFit};
pub use hmm::{
    forward_log, hmm_log_marginal, hmm_log_marginal_logits, hmm_predict, HmmParams, HmmPosterior, HmmSpec,
};
pub use ssm::{KalmanOutput, LinearGaussianSsm};

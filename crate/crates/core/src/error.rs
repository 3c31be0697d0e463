use vis_autodiff::AdError;

pub type Result<T, E = VisError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum VisError {
    #[error(transparent)]
    Ad(#[from] AdError),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite gradient of the log density at z = {z:?}")]
    NonFiniteGradient { z: Vec<f64> },

    #[error("non-finite log density at z = {z:?}")]
    NonFiniteDensity { z: Vec<f64> },

    #[error("non-finite loss {loss} at iteration {iteration}; parameters: {snapshot:?}")]
    NonFiniteLoss {
        iteration: usize,
        loss: f64,
        snapshot: Vec<(String, Vec<f64>)>,
    },

    #[error("non-finite innovation variance {0} in the Kalman filter")]
    InnovationVariance(f64),

    #[error("{path}: line {line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl VisError {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        VisError::Config(msg.into())
    }

    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        VisError::InvalidArgument(msg.into())
    }
}

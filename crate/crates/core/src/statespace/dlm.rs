//! Dynamic linear models: the scalar synthetic model and the local linear
//! trend with a cycling seasonal block.

use rand::Rng;
use statrs::distribution::{ContinuousCDF, Normal};
use vis_autodiff::{Expr, Shape, Tape};

use crate::samplers::normal_draws;
use crate::statespace::ssm::LinearGaussianSsm;
use crate::targets::{batch_dims, TargetDensity};
use crate::{Result, VisError};

/// Model structure. Parameters are log standard deviations:
/// `(log σ_tr, log σ_em)` for [`DlmSpec::Synthetic`] and
/// `(log σ_obs, log σ_level, log σ_slope, log σ_seasonal)` for
/// [`DlmSpec::Structural`].
#[derive(Clone, Debug, PartialEq)]
pub enum DlmSpec {
    /// `z_{t+1} ~ N(a z_t + c, σ_tr²)`, `x_t ~ N(h z_t + b, σ_em²)`,
    /// starting from a known `z0`.
    Synthetic { a: f64, c: f64, h: f64, b: f64, z0: f64 },
    /// Level and slope plus a `period`-state seasonal block that cycles by
    /// a permutation; the observation adds the level and the first seasonal
    /// state. The state before the first step is `N(0, prior_var · I)`.
    Structural { period: usize, prior_var: f64 },
}

impl DlmSpec {
    pub fn synthetic() -> Self {
        DlmSpec::Synthetic { a: 0.5, c: 1.0, h: 3.0, b: 0.5, z0: 0.0 }
    }

    pub fn structural() -> Self {
        DlmSpec::Structural { period: 12, prior_var: 1.0 }
    }

    pub fn n_params(&self) -> usize {
        match self {
            DlmSpec::Synthetic { .. } => 2,
            DlmSpec::Structural { .. } => 4,
        }
    }

    pub fn state_dim(&self) -> usize {
        match self {
            DlmSpec::Synthetic { .. } => 1,
            DlmSpec::Structural { period, .. } => 2 + period,
        }
    }

    /// Transition matrix, row-major.
    pub fn transition(&self) -> Vec<f64> {
        match *self {
            DlmSpec::Synthetic { a, .. } => vec![a],
            DlmSpec::Structural { period, .. } => {
                let n = 2 + period;
                let mut g = vec![0.0; n * n];
                g[0] = 1.0;
                g[1] = 1.0;
                g[n + 1] = 1.0;
                g[2 * n + n - 1] = 1.0;
                for i in 1..period {
                    g[(2 + i) * n + 2 + i - 1] = 1.0;
                }
                g
            }
        }
    }

    pub fn selector(&self) -> Vec<f64> {
        match *self {
            DlmSpec::Synthetic { h, .. } => vec![h],
            DlmSpec::Structural { period, .. } => {
                let mut f = vec![0.0; 2 + period];
                f[0] = 1.0;
                f[2] = 1.0;
                f
            }
        }
    }

    /// State-space form for the log standard deviations `theta`.
    pub fn ssm<'t>(&self, theta: Expr<'t>) -> LinearGaussianSsm<'t> {
        let tape = theta.tape();
        let n = self.state_dim();
        let g = tape.constant(self.transition(), Shape::matrix(n, n));
        let f = tape.constant(self.selector(), Shape::vector(n));
        let var = (theta * 2.0).exp();
        match *self {
            DlmSpec::Synthetic { c, b, z0, a, .. } => {
                let q = var.index(0).reshape([1, 1]);
                LinearGaussianSsm {
                    g,
                    c: Some(tape.constant(vec![c], Shape::vector(1))),
                    q,
                    f,
                    b,
                    r: var.index(1),
                    m1: tape.constant(vec![a * z0 + c], Shape::vector(1)),
                    p1: q,
                }
            }
            DlmSpec::Structural { prior_var, .. } => {
                let q = var.slice(1, 3).scatter_add(&[0, n + 1, 2 * n + 2], Shape::matrix(n, n));
                let mut p0 = vec![0.0; n * n];
                for i in 0..n {
                    p0[i * n + i] = prior_var;
                }
                let p0 = tape.constant(p0, Shape::matrix(n, n));
                let m1 = tape.zeros(Shape::vector(n));
                LinearGaussianSsm { g, c: None, q, f, b: 0.0, r: var.index(0), m1, p1: g.matmul(p0).matmul(g.t()) + q }
            }
        }
    }

    /// Independent `N(0, 2²)` prior on each log standard deviation.
    pub fn log_prior<'t>(&self, theta: Expr<'t>) -> Expr<'t> {
        let k = self.n_params() as f64;
        (theta * 0.5).square().sum() * -0.5 - k * (2.0f64.ln() + 0.5 * (2.0 * std::f64::consts::PI).ln())
    }

    /// Draws a series of length `len` with standard deviations
    /// `exp(theta)`.
    pub fn simulate(&self, theta: &[f64], len: usize, rng: &mut impl Rng) -> Vec<f64> {
        let n = self.state_dim();
        let sd: Vec<f64> = theta.iter().map(|t| t.exp()).collect();
        let g = self.transition();
        let f = self.selector();
        let (mut z, offset, b, obs_sd, noise_sd): (Vec<f64>, f64, f64, f64, Vec<f64>) = match *self {
            DlmSpec::Synthetic { c, b, z0, .. } => (vec![z0], c, b, sd[1], vec![sd[0]]),
            DlmSpec::Structural { prior_var, .. } => {
                let init = normal_draws(rng, n).into_iter().map(|e| e * prior_var.sqrt()).collect();
                let mut q = vec![0.0; n];
                q[..3].copy_from_slice(&sd[1..4]);
                (init, 0.0, 0.0, sd[0], q)
            }
        };
        let mut out = Vec::with_capacity(len);
        for _ in 0..len {
            let w = normal_draws(rng, n);
            z = (0..n)
                .map(|i| {
                    let gz: f64 = (0..n).map(|j| g[i * n + j] * z[j]).sum();
                    gz + offset + noise_sd.get(i).copied().unwrap_or(0.0) * w[i]
                })
                .collect();
            let e = normal_draws(rng, 1)[0];
            out.push((0..n).map(|i| f[i] * z[i]).sum::<f64>() + b + obs_sd * e);
        }
        out
    }
}

/// `log p(x_{1:τ} | θ)` for a DLM with log standard deviations `theta`.
pub fn kalman_log_marginal<'t>(spec: &DlmSpec, theta: Expr<'t>, x: &[f64]) -> Result<Expr<'t>> {
    Ok(spec.ssm(theta).filter(x)?.log_marginal)
}

/// One forecast horizon.
#[derive(Clone, Debug, PartialEq)]
pub struct ForecastPoint {
    pub horizon: usize,
    pub mean: f64,
    pub sd: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Filters `history` and propagates the state `horizon` steps without
/// further updates. Intervals are `mean ± z_{1-α/2} sd`.
pub fn dlm_forecast(
    spec: &DlmSpec,
    theta: &[f64],
    history: &[f64],
    horizon: usize,
    alpha: f64,
) -> Result<Vec<ForecastPoint>> {
    if horizon == 0 {
        return Err(VisError::arg("horizon must be at least 1"));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(VisError::arg(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let zq = Normal::new(0.0, 1.0).expect("standard normal").inverse_cdf(1.0 - alpha / 2.0);
    let tape = Tape::new();
    let th = tape.constant(theta.to_vec(), Shape::vector(theta.len()));
    let ssm = spec.ssm(th);
    let out = ssm.filter(history)?;
    let (mut m, mut p) = (out.mean, out.cov);
    let mut points = Vec::with_capacity(horizon);
    for h in 1..=horizon {
        (m, p) = ssm.predict(m, p);
        let (mean, var) = ssm.observe(m, p);
        let (mean, sd) = (mean.item(), var.item().sqrt());
        points.push(ForecastPoint { horizon: h, mean, sd, lower: mean - zq * sd, upper: mean + zq * sd });
    }
    Ok(points)
}

/// Log posterior `log p(x | θ) + log p(θ)` over log standard deviations.
#[derive(Clone, Debug)]
pub struct DlmPosterior {
    pub spec: DlmSpec,
    pub series: Vec<f64>,
}

impl DlmPosterior {
    pub fn new(spec: DlmSpec, series: Vec<f64>) -> Result<Self> {
        if series.is_empty() || series.iter().any(|v| !v.is_finite()) {
            return Err(VisError::arg("series must be non-empty and finite"));
        }
        Ok(DlmPosterior { spec, series })
    }

    pub fn log_likelihood<'t>(&self, theta: Expr<'t>) -> Result<Expr<'t>> {
        kalman_log_marginal(&self.spec, theta, &self.series)
    }
}

impl<'t> TargetDensity<'t> for DlmPosterior {
    fn dim(&self) -> usize {
        self.spec.n_params()
    }

    fn log_density(&self, z: Expr<'t>) -> Result<Expr<'t>> {
        let n = batch_dims(z, self.dim())?;
        let rows = (0..n)
            .map(|i| {
                let theta = z.row(i);
                let lp = kalman_log_marginal(&self.spec, theta, &self.series)? + self.spec.log_prior(theta);
                Ok(lp.reshape([1]))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Expr::concat(&rows))
    }
}

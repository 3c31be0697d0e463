//! Refinement chains `Q_{η,T}(z | z0)` unrolled on the tape.
//!
//! Every step adds `Δz` to the current batch. Under [`AdMode::Full`] the
//! increment is an ordinary differentiable expression of `z` and `η`, which
//! requires the target gradient to be recorded with `create_graph`. Under
//! [`AdMode::Fast`] the increment is computed on detached values and enters
//! as `z + ⊥(Δz)`.

use rand::Rng;
use rand_distr::StandardNormal;
use vis_autodiff::{Expr, Shape, Tape};

use crate::targets::{batch_dims, TargetDensity};
use crate::{Result, VisError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SamplerKind {
    Sgd,
    Sgld,
    FpFlow,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AdMode {
    Full,
    Fast,
}

/// RBF kernel bandwidth `γ` in `exp(-γ‖z - z'‖²)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Bandwidth {
    Fixed(f64),
    /// `ln K / median` of the squared pairwise distances, recomputed every
    /// step and held constant in the backward pass.
    Median,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SamplerConfig {
    pub kind: SamplerKind,
    pub steps: usize,
    pub bandwidth: Bandwidth,
}

impl SamplerConfig {
    pub fn new(kind: SamplerKind, steps: usize) -> Self {
        SamplerConfig { kind, steps, bandwidth: Bandwidth::Median }
    }
}

/// States `z0 … zT` of one unrolled chain.
pub struct Trajectory<'t> {
    pub states: Vec<Expr<'t>>,
    /// `η ∇ log p(z_{i-1})` for each step (for FP flow, the full flow
    /// velocity times `η`).
    pub drifts: Vec<Expr<'t>>,
    /// `ξ_i = sqrt(2η) ε_i` for SGLD; empty for the deterministic samplers.
    pub noises: Vec<Expr<'t>>,
}

impl<'t> Trajectory<'t> {
    pub fn last(&self) -> Expr<'t> {
        *self.states.last().expect("trajectory always holds z0")
    }
}

/// Log densities of the batch and their gradient with respect to it.
///
/// In fast mode both are computed on a detached copy of `z`.
pub fn grad_log_density<'t>(
    target: &dyn TargetDensity<'t>,
    z: Expr<'t>,
    mode: AdMode,
) -> Result<(Expr<'t>, Expr<'t>)> {
    let tape = z.tape();
    let at = match mode {
        AdMode::Full => z,
        AdMode::Fast => tape.constant(z.value(), z.shape()),
    };
    let lp = target.log_density(at)?;
    let g = tape.gradient(lp.sum(), &[at], mode == AdMode::Full)?[0];
    if g.value().iter().any(|v| !v.is_finite()) {
        return Err(VisError::NonFiniteGradient { z: z.value() });
    }
    Ok((lp, g))
}

fn step_eta<'t>(eta: Expr<'t>, mode: AdMode) -> Expr<'t> {
    match mode {
        AdMode::Full => eta,
        AdMode::Fast => eta.stop_gradient(),
    }
}

fn advance<'t>(z: Expr<'t>, dz: Expr<'t>, mode: AdMode) -> Expr<'t> {
    match mode {
        AdMode::Full => z + dz,
        AdMode::Fast => z + dz.stop_gradient(),
    }
}

/// `z + η ∇ log p(z)`.
pub fn sgd_step<'t>(
    z: Expr<'t>,
    target: &dyn TargetDensity<'t>,
    eta: Expr<'t>,
    mode: AdMode,
) -> Result<Expr<'t>> {
    let (_, g) = grad_log_density(target, z, mode)?;
    Ok(advance(z, step_eta(eta, mode) * g, mode))
}

/// `z + η ∇ log p(z) + sqrt(2η) ε` with `ε` supplied as a unit-Gaussian
/// draw of the same shape as `z`.
pub fn sgld_step<'t>(
    z: Expr<'t>,
    target: &dyn TargetDensity<'t>,
    eta: Expr<'t>,
    noise: Expr<'t>,
    mode: AdMode,
) -> Result<Expr<'t>> {
    let (_, g) = grad_log_density(target, z, mode)?;
    let eta = step_eta(eta, mode);
    let dz = eta * g + (eta * 2.0).sqrt() * noise;
    Ok(advance(z, dz, mode))
}

fn median_gamma(z: &[f64], k: usize, d: usize) -> f64 {
    let mut sq = Vec::with_capacity(k * (k - 1) / 2);
    for i in 0..k {
        for j in i + 1..k {
            let r: f64 = (0..d).map(|c| (z[i * d + c] - z[j * d + c]).powi(2)).sum();
            sq.push(r);
        }
    }
    sq.sort_by(f64::total_cmp);
    let m = sq.len();
    let med = if m % 2 == 1 { sq[m / 2] } else { 0.5 * (sq[m / 2 - 1] + sq[m / 2]) };
    if med > 0.0 {
        (k as f64).ln() / med
    } else {
        1.0
    }
}

/// Kernel-smoothed particle estimate of `∇ log q` at each particle: the
/// sum `term1 + term2` with
/// `term1_i = Σ_j ∇K(z_i, z_j) / Σ_j K(z_i, z_j)` and
/// `term2_i = Σ_k ∇K(z_i, z_k) / Σ_j K(z_j, z_k)`.
pub fn kernel_score<'t>(z: Expr<'t>, bandwidth: Bandwidth) -> Result<Expr<'t>> {
    let (k, d) = z
        .shape()
        .as_matrix()
        .ok_or_else(|| VisError::arg("particles must be a [K, d] matrix"))?;
    if k < 2 {
        return Err(VisError::arg(format!("FP flow needs at least 2 particles, got {k}")));
    }
    let gamma = match bandwidth {
        Bandwidth::Fixed(g) if g > 0.0 && g.is_finite() => g,
        Bandwidth::Fixed(g) => return Err(VisError::arg(format!("bandwidth must be positive, got {g}"))),
        Bandwidth::Median => median_gamma(&z.value(), k, d),
    };
    let sq = z.square().sum_axis(1);
    let dist = sq.expand(1, k) + sq.expand(0, k) - z.matmul(z.t()) * 2.0;
    let kern = (dist * -gamma).exp();
    let rows = kern.sum_axis(1);
    let term1 = (rows.expand(1, d) * z - kern.matmul(z)) / (rows + 1e-12).expand(1, d) * (-2.0 * gamma);
    let cols = kern.sum_axis(0) + 1e-12;
    let w = kern / cols.expand(0, k);
    let term2 = (w.sum_axis(1).expand(1, d) * z - w.matmul(z)) * (-2.0 * gamma);
    Ok(term1 + term2)
}

/// One deterministic Fokker–Planck flow step:
/// `z_i + η (∇ log p(z_i) - ∇ log q(z_i))` with the kernel estimate of
/// `∇ log q`.
pub fn fp_flow_step<'t>(
    particles: Expr<'t>,
    target: &dyn TargetDensity<'t>,
    eta: Expr<'t>,
    bandwidth: Bandwidth,
    mode: AdMode,
) -> Result<Expr<'t>> {
    let (_, g) = grad_log_density(target, particles, mode)?;
    let at = match mode {
        AdMode::Full => particles,
        AdMode::Fast => particles.tape().constant(particles.value(), particles.shape()),
    };
    let score = kernel_score(at, bandwidth)?;
    Ok(advance(particles, step_eta(eta, mode) * (g - score), mode))
}

pub(crate) fn normal_draws(rng: &mut impl Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.sample(StandardNormal)).collect()
}

/// Unrolls `config.steps` steps from `z0` (`[n, d]`). SGLD noise is drawn
/// from `rng`; the deterministic samplers leave it untouched.
pub fn run_chain<'t>(
    z0: Expr<'t>,
    config: &SamplerConfig,
    eta: Expr<'t>,
    mode: AdMode,
    target: &dyn TargetDensity<'t>,
    rng: &mut impl Rng,
) -> Result<Trajectory<'t>> {
    batch_dims(z0, target.dim())?;
    if z0.value().iter().any(|v| !v.is_finite()) {
        return Err(VisError::arg("chain start is not finite"));
    }
    let tape = z0.tape();
    let mut traj = Trajectory { states: vec![z0], drifts: Vec::new(), noises: Vec::new() };
    let eta_used = step_eta(eta, mode);
    let mut z = z0;
    for _ in 0..config.steps {
        let next = match config.kind {
            SamplerKind::Sgd => {
                let (_, g) = grad_log_density(target, z, mode)?;
                let drift = eta_used * g;
                traj.drifts.push(drift);
                advance(z, drift, mode)
            }
            SamplerKind::Sgld => {
                let (_, g) = grad_log_density(target, z, mode)?;
                let eps = tape.constant(normal_draws(rng, z.numel()), z.shape());
                let drift = eta_used * g;
                let xi = (eta_used * 2.0).sqrt() * eps;
                traj.drifts.push(drift);
                traj.noises.push(xi);
                advance(z, drift + xi, mode)
            }
            SamplerKind::FpFlow => {
                let before = z;
                let next = fp_flow_step(z, target, eta, config.bandwidth, mode)?;
                traj.drifts.push(next - before);
                next
            }
        };
        traj.states.push(next);
        z = next;
    }
    Ok(traj)
}

/// Runs a batch of `n` independent chains on plain values, one scratch tape
/// per step. Suited to long runs where nothing is differentiated through
/// the chain. `visit` sees the step index (1-based) and the `[n, d]` state.
#[allow(clippy::too_many_arguments)]
pub fn run_detached(
    target: &dyn for<'t> TargetDensity<'t>,
    z0: Vec<f64>,
    n: usize,
    kind: SamplerKind,
    eta: f64,
    bandwidth: Bandwidth,
    steps: usize,
    rng: &mut impl Rng,
    mut visit: impl FnMut(usize, &[f64]),
) -> Result<Vec<f64>> {
    let d = target.dim();
    if z0.len() != n * d {
        return Err(VisError::arg("chain start has the wrong size"));
    }
    let mut z = z0;
    for step in 1..=steps {
        let tape = Tape::new();
        let zt = tape.constant(z, Shape::matrix(n, d));
        let e = tape.scalar(eta);
        let next = match kind {
            SamplerKind::Sgd => sgd_step(zt, target, e, AdMode::Fast)?,
            SamplerKind::Sgld => {
                let eps = tape.constant(normal_draws(rng, n * d), Shape::matrix(n, d));
                sgld_step(zt, target, e, eps, AdMode::Fast)?
            }
            SamplerKind::FpFlow => fp_flow_step(zt, target, e, bandwidth, AdMode::Fast)?,
        };
        z = next.value();
        visit(step, &z);
    }
    Ok(z)
}

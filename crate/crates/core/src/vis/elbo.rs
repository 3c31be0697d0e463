//! The standard and refined ELBO estimators.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vis_autodiff::Expr;

use crate::samplers::{run_chain, AdMode, SamplerConfig, SamplerKind};
use crate::targets::TargetDensity;
use crate::vis::guide::{Guide, GuideDraw};
use crate::{Result, VisError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum EntropyMode {
    /// Particle approximation: the refined entropy is the guide's.
    P,
    /// Product of SGLD transition densities along the chain.
    Mc,
    /// Gaussian of the guide's scale centered at the end of an SGD chain.
    G,
    /// Fokker–Planck particle flow; the entropy enters through the flow.
    Fp,
}

/// Sampler, step size and differentiation mode applied on top of a guide.
#[derive(Clone, Copy, Debug)]
pub struct Refinement<'t> {
    pub sampler: SamplerConfig,
    pub eta: Expr<'t>,
    pub entropy: EntropyMode,
    pub mode: AdMode,
}

/// Independent random streams: one for guide noise, one for chain noise.
///
/// Keeping them apart means runs that differ only in the chain (for
/// example in `T`) see the same guide draws.
pub struct Draws {
    pub guide: ChaCha8Rng,
    pub chain: ChaCha8Rng,
}

impl Draws {
    pub fn new(seed: u64) -> Self {
        let mut guide = ChaCha8Rng::seed_from_u64(seed);
        guide.set_stream(1);
        let mut chain = ChaCha8Rng::seed_from_u64(seed);
        chain.set_stream(2);
        Draws { guide, chain }
    }
}

/// Monte Carlo estimate and the samples behind it.
#[derive(Clone, Copy, Debug)]
pub struct ElboEstimate<'t> {
    /// Scalar mean over samples.
    pub value: Expr<'t>,
    /// `[n]` per-sample integrand.
    pub per_sample: Expr<'t>,
    /// `[n, d]` points where `log p` was evaluated.
    pub z: Expr<'t>,
    pub draw: GuideDraw<'t>,
}

fn finish<'t>(
    per_sample: Expr<'t>,
    z: Expr<'t>,
    draw: GuideDraw<'t>,
) -> Result<ElboEstimate<'t>> {
    let vals = per_sample.value();
    if vals.iter().any(|v| !v.is_finite()) {
        return Err(VisError::NonFiniteDensity { z: z.value() });
    }
    Ok(ElboEstimate { value: per_sample.mean(), per_sample, z, draw })
}

/// `E_q0[log p(x, z) - log q0(z)]` from `n` reparameterized draws.
pub fn elbo_standard<'t>(
    guide: &Guide<'t>,
    target: &dyn TargetDensity<'t>,
    n: usize,
    draws: &mut Draws,
) -> Result<ElboEstimate<'t>> {
    let draw = guide.draw(n, &mut draws.guide)?;
    let lp = target.log_density(draw.z0)?;
    finish(lp - draw.log_q0, draw.z0, draw)
}

/// Rejects entropy/sampler/guide combinations that have no density.
pub fn validate(entropy: EntropyMode, kind: SamplerKind, guide: &Guide<'_>, n: usize) -> Result<()> {
    match entropy {
        EntropyMode::P => Ok(()),
        EntropyMode::Mc if kind != SamplerKind::Sgld => Err(VisError::config(
            "VIS-MC needs the SGLD sampler (its transition density)",
        )),
        EntropyMode::G if kind != SamplerKind::Sgd => {
            Err(VisError::config("VIS-G needs the SGD sampler"))
        }
        EntropyMode::G if matches!(guide, Guide::Delta { .. }) => {
            Err(VisError::config("VIS-G needs a Gaussian guide (it reuses its scale)"))
        }
        EntropyMode::Fp if kind != SamplerKind::FpFlow => {
            Err(VisError::config("VIS-FP needs the FP flow sampler"))
        }
        EntropyMode::Fp if n < 2 => Err(VisError::config(format!(
            "VIS-FP needs at least 2 particles, got {n}"
        ))),
        _ => Ok(()),
    }
}

fn check_kind(refinement: &Refinement<'_>, want: EntropyMode) -> Result<()> {
    if refinement.entropy != want {
        return Err(VisError::config(format!(
            "refinement is configured for {:?}, not {want:?}",
            refinement.entropy
        )));
    }
    Ok(())
}

/// `E[log p(x, z_T)] - E[log q0(z0)]`.
pub fn elbo_vis_p<'t>(
    guide: &Guide<'t>,
    refinement: &Refinement<'t>,
    target: &dyn TargetDensity<'t>,
    n: usize,
    draws: &mut Draws,
) -> Result<ElboEstimate<'t>> {
    check_kind(refinement, EntropyMode::P)?;
    let draw = guide.draw(n, &mut draws.guide)?;
    let traj = run_chain(
        draw.z0,
        &refinement.sampler,
        refinement.eta,
        refinement.mode,
        target,
        &mut draws.chain,
    )?;
    let z = traj.last();
    finish(target.log_density(z)? - draw.log_q0, z, draw)
}

/// Sum over the chain of `log N(z_i | z_{i-1} + η∇log p(z_{i-1}), 2ηI)`
/// evaluated on the reparameterized noise, `[n]`.
pub fn transition_log_density<'t>(noises: &[Expr<'t>], eta: Expr<'t>, mode: AdMode) -> Option<Expr<'t>> {
    let eta = match mode {
        AdMode::Full => eta,
        AdMode::Fast => eta.stop_gradient(),
    };
    let mut total: Option<Expr<'t>> = None;
    for &xi in noises {
        let d = xi.shape().dims()[1] as f64;
        let term = xi.square().sum_axis(1) / (eta * -4.0)
            - (eta * (4.0 * std::f64::consts::PI)).ln() * (0.5 * d);
        total = Some(match total {
            Some(t) => t + term,
            None => term,
        });
    }
    total
}

/// `E[log p(x, z_T)] - E[log q0(z0) + Σ log q_η(z_i | z_{i-1})]` along SGLD.
pub fn elbo_vis_mc<'t>(
    guide: &Guide<'t>,
    refinement: &Refinement<'t>,
    target: &dyn TargetDensity<'t>,
    n: usize,
    draws: &mut Draws,
) -> Result<ElboEstimate<'t>> {
    check_kind(refinement, EntropyMode::Mc)?;
    validate(EntropyMode::Mc, refinement.sampler.kind, guide, n)?;
    let draw = guide.draw(n, &mut draws.guide)?;
    let traj = run_chain(
        draw.z0,
        &refinement.sampler,
        refinement.eta,
        refinement.mode,
        target,
        &mut draws.chain,
    )?;
    let z = traj.last();
    let mut integrand = target.log_density(z)? - draw.log_q0;
    if let Some(trans) = transition_log_density(&traj.noises, refinement.eta, refinement.mode) {
        integrand = integrand - trans;
    }
    finish(integrand, z, draw)
}

/// Runs the SGD chain from the guide location and draws around its end
/// with the guide's scale: `z = c_T + σ ⊙ ε`, entropy `N(z | c_T, σ)`.
pub fn elbo_vis_g<'t>(
    guide: &Guide<'t>,
    refinement: &Refinement<'t>,
    target: &dyn TargetDensity<'t>,
    n: usize,
    draws: &mut Draws,
) -> Result<ElboEstimate<'t>> {
    check_kind(refinement, EntropyMode::G)?;
    validate(EntropyMode::G, refinement.sampler.kind, guide, n)?;
    let draw = guide.draw(n, &mut draws.guide)?;
    let (scale, eps) = (draw.scale.expect("gaussian"), draw.eps.expect("gaussian"));
    let z = if refinement.sampler.steps == 0 {
        draw.z0
    } else {
        let traj = run_chain(
            draw.loc,
            &refinement.sampler,
            refinement.eta,
            refinement.mode,
            target,
            &mut draws.chain,
        )?;
        traj.last() + scale * eps
    };
    finish(target.log_density(z)? - draw.log_q0, z, draw)
}

/// `K` particles from the guide moved by the FP flow:
/// mean of `log p(x, z_T)` minus the guide term.
pub fn elbo_vis_fp<'t>(
    guide: &Guide<'t>,
    refinement: &Refinement<'t>,
    target: &dyn TargetDensity<'t>,
    k: usize,
    draws: &mut Draws,
) -> Result<ElboEstimate<'t>> {
    check_kind(refinement, EntropyMode::Fp)?;
    validate(EntropyMode::Fp, refinement.sampler.kind, guide, k)?;
    let draw = guide.draw(k, &mut draws.guide)?;
    let traj = run_chain(
        draw.z0,
        &refinement.sampler,
        refinement.eta,
        refinement.mode,
        target,
        &mut draws.chain,
    )?;
    let z = traj.last();
    finish(target.log_density(z)? - draw.log_q0, z, draw)
}

/// Dispatches on the refinement's entropy mode.
pub fn refined_elbo<'t>(
    guide: &Guide<'t>,
    refinement: &Refinement<'t>,
    target: &dyn TargetDensity<'t>,
    n: usize,
    draws: &mut Draws,
) -> Result<ElboEstimate<'t>> {
    validate(refinement.entropy, refinement.sampler.kind, guide, n)?;
    match refinement.entropy {
        EntropyMode::P => elbo_vis_p(guide, refinement, target, n, draws),
        EntropyMode::Mc => elbo_vis_mc(guide, refinement, target, n, draws),
        EntropyMode::G => elbo_vis_g(guide, refinement, target, n, draws),
        EntropyMode::Fp => elbo_vis_fp(guide, refinement, target, n, draws),
    }
}

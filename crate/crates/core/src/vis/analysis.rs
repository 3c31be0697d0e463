//! Diagnostics of the refined objective's gradient structure.

use vis_autodiff::{Shape, Tape};

use crate::samplers::{grad_log_density, AdMode};
use crate::targets::TargetDensity;
use crate::{Result, VisError};

/// `(∇ log p(z), ∇ log p(z) + η ∇²log p(z) ∇ log p(z))`: the plain gradient
/// and its first-order Taylor correction for one SGD refinement step.
pub fn taylor_gradient_probe(
    target: &dyn for<'t> TargetDensity<'t>,
    z: &[f64],
    eta: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let d = z.len();
    let tape = Tape::new();
    let zv = tape.var("z", z.to_vec(), Shape::matrix(1, d));
    let (_, g) = grad_log_density(target, zv, AdMode::Full)?;
    let gc = tape.constant(g.value(), g.shape());
    let hg = tape.gradient((g * gc).sum(), &[zv], false)?[0].value();
    let g = g.value();
    let corrected = g.iter().zip(&hg).map(|(a, b)| a + eta * b).collect();
    Ok((g, corrected))
}

/// Gradient of `log p(z + ⊥(η ∇log p(z)))` with respect to `z`.
pub fn fast_refined_gradient(
    target: &dyn for<'t> TargetDensity<'t>,
    z: &[f64],
    eta: f64,
) -> Result<Vec<f64>> {
    let d = z.len();
    let tape = Tape::new();
    let zv = tape.var("z", z.to_vec(), Shape::matrix(1, d));
    let e = tape.scalar(eta);
    let moved = crate::samplers::sgd_step(zv, target, e, AdMode::Fast)?;
    let lp = target.log_density(moved)?.sum();
    Ok(tape.gradient(lp, &[zv], false)?[0].value())
}

/// Outcome of the step-size search for a single SGD refinement step.
#[derive(Clone, Debug, PartialEq)]
pub struct TighterStep {
    pub eta: f64,
    pub base: f64,
    pub refined: f64,
}

/// Halves `eta` from `eta0` until `log p(z + η∇log p(z)) ≥ log p(z)`.
///
/// Fails only if no step in `max_halvings` halvings satisfies it, which
/// for a smooth target happens only at a stationary point with an
/// underflowing step.
pub fn line_search_step(
    target: &dyn for<'t> TargetDensity<'t>,
    z: &[f64],
    eta0: f64,
    max_halvings: usize,
) -> Result<TighterStep> {
    let d = z.len();
    let tape = Tape::new();
    let zv = tape.constant(z.to_vec(), Shape::matrix(1, d));
    let (lp, g) = grad_log_density(target, zv, AdMode::Fast)?;
    let base = lp.item();
    let g = g.value();
    let mut eta = eta0;
    for _ in 0..=max_halvings {
        let moved: Vec<f64> = z.iter().zip(&g).map(|(a, b)| a + eta * b).collect();
        let refined = crate::targets::log_density_at(target, &moved)?;
        if refined >= base {
            return Ok(TighterStep { eta, base, refined });
        }
        eta *= 0.5;
    }
    Err(VisError::arg(format!("no ascent step found at z = {z:?}")))
}

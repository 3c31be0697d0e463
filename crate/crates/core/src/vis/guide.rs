use rand::Rng;
use vis_autodiff::{Expr, Shape};

use crate::samplers::normal_draws;
use crate::{Result, VisError};

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Initial variational distribution `q0`.
#[derive(Clone, Copy, Debug)]
pub enum Guide<'t> {
    /// Diagonal Gaussian. `loc` and `scale` are either `[d]` (one shared
    /// distribution, any number of draws) or `[n, d]` (amortized, one draw
    /// per row).
    Gaussian { loc: Expr<'t>, scale: Expr<'t> },
    /// Point mass at `theta` (`[d]`). Its log-density term is the constant 0.
    Delta { theta: Expr<'t> },
}

/// Reparameterized draws from a guide.
#[derive(Clone, Copy, Debug)]
pub struct GuideDraw<'t> {
    /// `[n, d]` samples `loc + scale ⊙ ε`.
    pub z0: Expr<'t>,
    /// `[n]` values of `log q0(z0)`.
    pub log_q0: Expr<'t>,
    /// `[n, d]` location the draws were taken around.
    pub loc: Expr<'t>,
    /// `[n, d]` scale; `None` for a delta guide.
    pub scale: Option<Expr<'t>>,
    /// `[n, d]` standard-normal noise; `None` for a delta guide.
    pub eps: Option<Expr<'t>>,
}

impl<'t> Guide<'t> {
    /// Mean-field Gaussian with `σ = exp(log_sigma)`.
    pub fn gaussian(mu: Expr<'t>, log_sigma: Expr<'t>) -> Self {
        Guide::Gaussian { loc: mu, scale: log_sigma.exp() }
    }

    pub fn amortized(loc: Expr<'t>, scale: Expr<'t>) -> Self {
        Guide::Gaussian { loc, scale }
    }

    pub fn delta(theta: Expr<'t>) -> Self {
        Guide::Delta { theta }
    }

    pub fn dim(&self) -> usize {
        let e = match self {
            Guide::Gaussian { loc, .. } => *loc,
            Guide::Delta { theta } => *theta,
        };
        *e.shape().dims().last().unwrap_or(&1)
    }

    fn rows(e: Expr<'t>, n: usize) -> Result<Expr<'t>> {
        match e.shape().dims() {
            [_] => Ok(e.expand(0, n)),
            [r, _] if *r == n => Ok(e),
            _ => Err(VisError::arg(format!(
                "guide parameter of shape {} cannot give {n} draws",
                e.shape()
            ))),
        }
    }

    /// Draws `n` samples, taking noise from `rng`.
    pub fn draw(&self, n: usize, rng: &mut impl Rng) -> Result<GuideDraw<'t>> {
        if n == 0 {
            return Err(VisError::arg("at least one sample is required"));
        }
        match *self {
            Guide::Gaussian { loc, scale } => {
                let loc = Self::rows(loc, n)?;
                let scale = Self::rows(scale, n)?;
                let tape = loc.tape();
                let eps = tape.constant(normal_draws(rng, loc.numel()), loc.shape());
                let z0 = loc + scale * eps;
                let log_q0 = (eps.square() * -0.5 - scale.ln() - HALF_LN_2PI).sum_axis(1);
                Ok(GuideDraw { z0, log_q0, loc, scale: Some(scale), eps: Some(eps) })
            }
            Guide::Delta { theta } => {
                let z0 = Self::rows(theta, n)?;
                let log_q0 = z0.tape().zeros(Shape::vector(n));
                Ok(GuideDraw { z0, log_q0, loc: z0, scale: None, eps: None })
            }
        }
    }
}

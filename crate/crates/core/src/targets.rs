//! Log joint densities `log p(x, z)` shared by the samplers and the
//! objectives.
//!
//! A target takes a batch of latent points as an `[n, d]` expression and
//! returns the `n` log densities. Rows are evaluated independently, so the
//! gradient of the summed output with respect to the batch is the batch of
//! per-row gradients.

use std::f64::consts::PI;

use vis_autodiff::{Expr, Shape, Tape};

use crate::{Result, VisError};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

pub trait TargetDensity<'t> {
    /// Latent dimension `d`.
    fn dim(&self) -> usize;

    /// `[n, d]` latent batch to `[n]` log densities.
    fn log_density(&self, z: Expr<'t>) -> Result<Expr<'t>>;
}

pub fn batch_dims(z: Expr<'_>, d: usize) -> Result<usize> {
    match z.shape().dims() {
        [n, c] if *c == d => Ok(*n),
        _ => Err(VisError::arg(format!(
            "expected a latent batch of shape [n, {d}], got {}",
            z.shape()
        ))),
    }
}

/// Evaluates a target at a single point on a scratch tape.
pub fn log_density_at(target: &dyn for<'t> TargetDensity<'t>, z: &[f64]) -> Result<f64> {
    let tape = Tape::new();
    let v = tape.constant(z.to_vec(), Shape::matrix(1, z.len()));
    Ok(target.log_density(v)?.item())
}

/// Two-dimensional funnel: `z1 ~ N(0, s²)`, `z2 | z1 ~ N(0, exp(z1)²)`, with
/// both second arguments read as standard deviations.
#[derive(Clone, Debug)]
pub struct Funnel {
    pub scale_z1: f64,
}

impl Default for Funnel {
    fn default() -> Self {
        Funnel { scale_z1: 1.35 }
    }
}

impl<'t> TargetDensity<'t> for Funnel {
    fn dim(&self) -> usize {
        2
    }

    fn log_density(&self, z: Expr<'t>) -> Result<Expr<'t>> {
        batch_dims(z, 2)?;
        let z1 = z.column(0);
        let z2 = z.column(1);
        let s = self.scale_z1;
        let first = (z1 / s).square() * -0.5 - (s.ln() + 0.5 * LN_2PI);
        let second = (z2 * (-z1).exp()).square() * -0.5 - z1 - 0.5 * LN_2PI;
        Ok(first + second)
    }
}

/// Funnel log density at one point.
pub fn funnel_log_density(z: [f64; 2]) -> f64 {
    log_density_at(&Funnel::default(), &z).expect("funnel is defined everywhere")
}

/// Diagonal Gaussian `N(mean, diag(var))`.
#[derive(Clone, Debug)]
pub struct DiagGaussian {
    mean: Vec<f64>,
    var: Vec<f64>,
}

impl DiagGaussian {
    pub fn new(mean: Vec<f64>, var: Vec<f64>) -> Result<Self> {
        if mean.len() != var.len() {
            return Err(VisError::arg("mean and variance lengths differ"));
        }
        if let Some(v) = var.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
            return Err(VisError::arg(format!("variance must be positive, got {v}")));
        }
        Ok(DiagGaussian { mean, var })
    }

    pub fn standard(d: usize) -> Self {
        DiagGaussian { mean: vec![0.0; d], var: vec![1.0; d] }
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn var(&self) -> &[f64] {
        &self.var
    }
}

impl<'t> TargetDensity<'t> for DiagGaussian {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn log_density(&self, z: Expr<'t>) -> Result<Expr<'t>> {
        let d = self.dim();
        let n = batch_dims(z, d)?;
        let tape = z.tape();
        let mean = tape.constant(self.mean.clone(), Shape::vector(d)).expand(0, n);
        let inv_sd: Vec<f64> = self.var.iter().map(|v| 1.0 / v.sqrt()).collect();
        let inv_sd = tape.constant(inv_sd, Shape::vector(d)).expand(0, n);
        let norm: f64 = self.var.iter().map(|v| (2.0 * PI * v).ln()).sum::<f64>() * 0.5;
        Ok(((z - mean) * inv_sd).square().sum_axis(1) * -0.5 - norm)
    }
}

/// Diagonal-Gaussian log-pdf at one point.
pub fn gaussian_target_log_density(z: &[f64], mean: &[f64], cov_diag: &[f64]) -> Result<f64> {
    let target = DiagGaussian::new(mean.to_vec(), cov_diag.to_vec())?;
    if z.len() != mean.len() {
        return Err(VisError::arg("point and mean lengths differ"));
    }
    log_density_at(&target, z)
}

/// Unnormalized quadratic `log p(z) = -½ (z - c)ᵀ A (z - c)` for a symmetric
/// positive-definite `A`.
#[derive(Clone, Debug)]
pub struct Quadratic {
    precision: Vec<f64>,
    center: Vec<f64>,
}

impl Quadratic {
    pub fn new(precision: Vec<f64>, center: Vec<f64>) -> Result<Self> {
        let d = center.len();
        if precision.len() != d * d {
            return Err(VisError::arg("precision must be d×d"));
        }
        Ok(Quadratic { precision, center })
    }

    pub fn precision(&self) -> &[f64] {
        &self.precision
    }

    pub fn center(&self) -> &[f64] {
        &self.center
    }
}

impl<'t> TargetDensity<'t> for Quadratic {
    fn dim(&self) -> usize {
        self.center.len()
    }

    fn log_density(&self, z: Expr<'t>) -> Result<Expr<'t>> {
        let d = self.dim();
        let n = batch_dims(z, d)?;
        let tape = z.tape();
        let c = tape.constant(self.center.clone(), Shape::vector(d)).expand(0, n);
        let a = tape.constant(self.precision.clone(), Shape::matrix(d, d));
        let r = z - c;
        Ok((r.matmul(a) * r).sum_axis(1) * -0.5)
    }
}

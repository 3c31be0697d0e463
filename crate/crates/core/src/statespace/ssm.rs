//! Kalman filtering for scalar-observation linear-Gaussian state spaces.

use vis_autodiff::Expr;

use crate::{Result, VisError};

/// `z_1 ~ N(m1, P1)`, `z_{t+1} = G z_t + c + w`, `w ~ N(0, Q)`,
/// `x_t = F·z_t + b + v`, `v ~ N(0, R)`.
#[derive(Clone, Copy, Debug)]
pub struct LinearGaussianSsm<'t> {
    pub g: Expr<'t>,
    pub c: Option<Expr<'t>>,
    pub q: Expr<'t>,
    pub f: Expr<'t>,
    pub b: f64,
    pub r: Expr<'t>,
    pub m1: Expr<'t>,
    pub p1: Expr<'t>,
}

/// Log marginal likelihood and the filtered state after the last update.
#[derive(Clone, Copy, Debug)]
pub struct KalmanOutput<'t> {
    pub log_marginal: Expr<'t>,
    pub mean: Expr<'t>,
    pub cov: Expr<'t>,
}

const LN_2PI: f64 = 1.837_877_066_409_345_5;

impl<'t> LinearGaussianSsm<'t> {
    pub fn predict(&self, m: Expr<'t>, p: Expr<'t>) -> (Expr<'t>, Expr<'t>) {
        let mut m = self.g.matmul(m);
        if let Some(c) = self.c {
            m = m + c;
        }
        (m, self.g.matmul(p).matmul(self.g.t()) + self.q)
    }

    /// Mean and variance of `x` given the state distribution `N(m, P)`.
    pub fn observe(&self, m: Expr<'t>, p: Expr<'t>) -> (Expr<'t>, Expr<'t>) {
        let pf = p.matmul(self.f);
        (self.f.dot(m) + self.b, self.f.dot(pf) + self.r)
    }

    /// Prediction/update recursion over `x`, accumulating the one-step
    /// predictive Gaussian log densities.
    pub fn filter(&self, x: &[f64]) -> Result<KalmanOutput<'t>> {
        if x.is_empty() {
            return Err(VisError::arg("series is empty"));
        }
        if let Some(v) = x.iter().find(|v| !v.is_finite()) {
            return Err(VisError::arg(format!("non-finite observation {v}")));
        }
        let (mut m, mut p) = (self.m1, self.p1);
        let mut ll: Option<Expr<'t>> = None;
        for (t, &xt) in x.iter().enumerate() {
            if t > 0 {
                (m, p) = self.predict(m, p);
            }
            let pf = p.matmul(self.f);
            let (mean, var) = (self.f.dot(m) + self.b, self.f.dot(pf) + self.r);
            let s = var.item();
            if !(s.is_finite() && s > 0.0) {
                return Err(VisError::InnovationVariance(s));
            }
            let resid = xt - mean;
            let term = (var.ln() + LN_2PI + resid.square() / var) * -0.5;
            ll = Some(match ll {
                Some(acc) => acc + term,
                None => term,
            });
            let gain = pf / var;
            m = m + gain * resid;
            p = p - gain.outer(gain) * var;
        }
        Ok(KalmanOutput { log_marginal: ll.expect("non-empty"), mean: m, cov: p })
    }
}

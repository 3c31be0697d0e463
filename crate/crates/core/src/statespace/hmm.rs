//! Categorical hidden Markov model with the state sequence summed out by
//! the forward algorithm.

use rand::Rng;
use vis_autodiff::{Expr, Shape, Tape};

use crate::targets::{batch_dims, TargetDensity};
use crate::{Result, VisError};

/// Sizes and Dirichlet prior of an HMM whose transition and emission rows
/// are parameterized by unconstrained logits.
///
/// The parameter vector is the `S×S` transition logits followed by the
/// `S×V` emission logits, both row-major. The initial state distribution is
/// uniform.
#[derive(Clone, Debug, PartialEq)]
pub struct HmmSpec {
    pub states: usize,
    pub symbols: usize,
    pub alpha_tr: f64,
    pub alpha_em: f64,
}

impl HmmSpec {
    pub fn new(states: usize, symbols: usize) -> Self {
        HmmSpec { states, symbols, alpha_tr: 1.0, alpha_em: 1.0 }
    }

    pub fn n_params(&self) -> usize {
        self.states * (self.states + self.symbols)
    }

    /// Row-wise log-softmax of the logits: `(log A [S,S], log B [S,V])`.
    pub fn log_matrices<'t>(&self, theta: Expr<'t>) -> (Expr<'t>, Expr<'t>) {
        let (s, v) = (self.states, self.symbols);
        let tr = theta.slice(0, s * s).reshape([s, s]).log_softmax();
        let em = theta.slice(s * s, s * v).reshape([s, v]).log_softmax();
        (tr, em)
    }

    /// Dirichlet log prior on the simplex image, up to its normalizing
    /// constant. The softmax Jacobian is not included.
    pub fn log_prior<'t>(&self, log_tr: Expr<'t>, log_em: Expr<'t>) -> Expr<'t> {
        log_tr.sum() * (self.alpha_tr - 1.0) + log_em.sum() * (self.alpha_em - 1.0)
    }
}

/// Row-stochastic HMM parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct HmmParams {
    pub states: usize,
    pub symbols: usize,
    /// `S×S`, row `i` is `p(z_{t+1} | z_t = i)`.
    pub transition: Vec<f64>,
    /// `S×V`, row `i` is `p(x_t | z_t = i)`.
    pub emission: Vec<f64>,
}

fn softmax_rows(logits: &[f64], cols: usize) -> Vec<f64> {
    logits
        .chunks(cols)
        .flat_map(|row| {
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = row.iter().map(|x| (x - m).exp()).collect();
            let s: f64 = e.iter().sum();
            e.into_iter().map(move |x| x / s)
        })
        .collect()
}

impl HmmParams {
    pub fn new(states: usize, symbols: usize, transition: Vec<f64>, emission: Vec<f64>) -> Result<Self> {
        if transition.len() != states * states || emission.len() != states * symbols {
            return Err(VisError::arg("HMM matrix sizes do not match S and V"));
        }
        for (m, cols) in [(&transition, states), (&emission, symbols)] {
            for row in m.chunks(cols) {
                if row.iter().any(|p| !(*p >= 0.0)) || (row.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
                    return Err(VisError::arg("HMM rows must be probability vectors"));
                }
            }
        }
        Ok(HmmParams { states, symbols, transition, emission })
    }

    pub fn from_logits(spec: &HmmSpec, theta: &[f64]) -> Self {
        let (s, v) = (spec.states, spec.symbols);
        assert_eq!(theta.len(), spec.n_params());
        HmmParams {
            states: s,
            symbols: v,
            transition: softmax_rows(&theta[..s * s], s),
            emission: softmax_rows(&theta[s * s..], v),
        }
    }

    pub fn sample(&self, len: usize, rng: &mut impl Rng) -> Vec<usize> {
        let pick = |row: &[f64], rng: &mut dyn rand::RngCore| {
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            for (i, p) in row.iter().enumerate() {
                acc += p;
                if u < acc {
                    return i;
                }
            }
            row.len() - 1
        };
        let (s, v) = (self.states, self.symbols);
        let mut z = rng.gen_range(0..s);
        let mut out = Vec::with_capacity(len);
        for t in 0..len {
            if t > 0 {
                z = pick(&self.transition[z * s..(z + 1) * s], rng);
            }
            out.push(pick(&self.emission[z * v..(z + 1) * v], rng));
        }
        out
    }
}

fn check_obs(obs: &[usize], symbols: usize) -> Result<()> {
    if obs.is_empty() {
        return Err(VisError::arg("observation sequence is empty"));
    }
    if let Some(x) = obs.iter().find(|&&x| x >= symbols) {
        return Err(VisError::arg(format!("observation {x} is outside 0..{symbols}")));
    }
    Ok(())
}

/// Log-space forward recursion. Returns the unnormalized log filtering
/// vector after the last observation (`[S]`); its log-sum-exp is the log
/// marginal likelihood.
pub fn forward_log<'t>(log_tr: Expr<'t>, log_em: Expr<'t>, obs: &[usize]) -> Result<Expr<'t>> {
    let (s, v) = log_em.shape().as_matrix().expect("emission matrix");
    check_obs(obs, v)?;
    let log_init = -(s as f64).ln();
    let mut alpha = log_em.column(obs[0]) + log_init;
    for &x in &obs[1..] {
        alpha = (alpha.expand(1, s) + log_tr).log_sum_exp_axis(0) + log_em.column(x);
    }
    Ok(alpha)
}

/// `log p(x_{1:τ} | θ)` as a differentiable function of the logits.
pub fn hmm_log_marginal_logits<'t>(spec: &HmmSpec, theta: Expr<'t>, obs: &[usize]) -> Result<Expr<'t>> {
    let (tr, em) = spec.log_matrices(theta);
    Ok(forward_log(tr, em, obs)?.log_sum_exp())
}

/// `log p(x_{1:τ} | θ)` for explicit probability matrices.
pub fn hmm_log_marginal(params: &HmmParams, obs: &[usize]) -> Result<f64> {
    let tape = Tape::new();
    let (s, v) = (params.states, params.symbols);
    let ln = |m: &[f64]| m.iter().map(|p| p.ln()).collect::<Vec<_>>();
    let tr = tape.constant(ln(&params.transition), Shape::matrix(s, s));
    let em = tape.constant(ln(&params.emission), Shape::matrix(s, v));
    Ok(forward_log(tr, em, obs)?.log_sum_exp().item())
}

/// Categorical predictive distributions for the next `horizon` symbols
/// after `history`.
pub fn hmm_predict(params: &HmmParams, history: &[usize], horizon: usize) -> Result<Vec<Vec<f64>>> {
    if horizon == 0 {
        return Err(VisError::arg("horizon must be at least 1"));
    }
    let (s, v) = (params.states, params.symbols);
    let mut state = vec![1.0 / s as f64; s];
    if !history.is_empty() {
        let tape = Tape::new();
        let ln = |m: &[f64]| m.iter().map(|p| p.ln()).collect::<Vec<_>>();
        let tr = tape.constant(ln(&params.transition), Shape::matrix(s, s));
        let em = tape.constant(ln(&params.emission), Shape::matrix(s, v));
        state = forward_log(tr, em, history)?.softmax().value();
    }
    let mut out = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        state = (0..s)
            .map(|j| (0..s).map(|i| state[i] * params.transition[i * s + j]).sum())
            .collect();
        let pred: Vec<f64> = (0..v)
            .map(|k| (0..s).map(|i| state[i] * params.emission[i * v + k]).sum())
            .collect();
        out.push(pred);
    }
    Ok(out)
}

/// Log posterior `log p(x | θ) + log p(θ)` over HMM logits.
#[derive(Clone, Debug)]
pub struct HmmPosterior {
    pub spec: HmmSpec,
    pub obs: Vec<usize>,
}

impl HmmPosterior {
    pub fn new(spec: HmmSpec, obs: Vec<usize>) -> Result<Self> {
        check_obs(&obs, spec.symbols)?;
        Ok(HmmPosterior { spec, obs })
    }

    pub fn log_likelihood<'t>(&self, theta: Expr<'t>) -> Result<Expr<'t>> {
        hmm_log_marginal_logits(&self.spec, theta, &self.obs)
    }
}

impl<'t> TargetDensity<'t> for HmmPosterior {
    fn dim(&self) -> usize {
        self.spec.n_params()
    }

    fn log_density(&self, z: Expr<'t>) -> Result<Expr<'t>> {
        let n = batch_dims(z, self.dim())?;
        let rows = (0..n)
            .map(|i| {
                let theta = z.row(i);
                let (tr, em) = self.spec.log_matrices(theta);
                let lp = forward_log(tr, em, &self.obs)?.log_sum_exp() + self.spec.log_prior(tr, em);
                Ok(lp.reshape([1]))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Expr::concat(&rows))
    }
}

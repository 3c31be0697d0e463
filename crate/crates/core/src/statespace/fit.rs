//! Dirac-guide refined MAP fitting of state-space parameters.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vis_autodiff::{Expr, Shape, Tape};

use crate::samplers::{normal_draws, run_chain, AdMode, SamplerConfig, SamplerKind};
use crate::statespace::dlm::DlmPosterior;
use crate::statespace::hmm::HmmPosterior;
use crate::targets::TargetDensity;
use crate::vis::{fit, refined_elbo, Bound, Draws, EntropyMode, Evaluation, FitSettings, Guide, Objective, ParamStore, Refinement, TrainReport};
use crate::Result;

/// A log posterior `log p(x | θ) + log p(θ)` over unconstrained parameters.
pub trait StateSpaceModel: for<'t> TargetDensity<'t> {
    fn log_likelihood<'t>(&self, theta: Expr<'t>) -> Result<Expr<'t>>;
}

impl StateSpaceModel for HmmPosterior {
    fn log_likelihood<'t>(&self, theta: Expr<'t>) -> Result<Expr<'t>> {
        HmmPosterior::log_likelihood(self, theta)
    }
}

impl StateSpaceModel for DlmPosterior {
    fn log_likelihood<'t>(&self, theta: Expr<'t>) -> Result<Expr<'t>> {
        DlmPosterior::log_likelihood(self, theta)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StatespaceConfig {
    /// Refinement chain; SGD by default.
    pub sampler: SamplerConfig,
    pub eta: f64,
    /// Fast by default.
    pub mode: AdMode,
    pub lr: f64,
    pub iterations: usize,
    pub seed: u64,
    /// Standard deviation of the random initial parameters.
    pub init_sd: f64,
}

impl StatespaceConfig {
    pub fn new(steps: usize, iterations: usize, seed: u64) -> Self {
        StatespaceConfig {
            sampler: SamplerConfig::new(SamplerKind::Sgd, steps),
            eta: 0.1,
            mode: AdMode::Fast,
            lr: 0.01,
            iterations,
            seed,
            init_sd: 0.5,
        }
    }
}

#[derive(Clone, Debug)]
pub struct StatespaceFit {
    /// Loss is the negative rELBO; `monitor` holds the negative log
    /// likelihood at the refined point.
    pub report: TrainReport,
    /// Final Dirac-guide location.
    pub theta: Vec<f64>,
    /// `theta` pushed through the refinement chain.
    pub refined: Vec<f64>,
}

/// Negative rELBO of a Dirac guide at `theta` refined by `sampler`; the
/// monitor is the negative log likelihood at the refined point.
pub struct MapObjective<'m, M> {
    pub model: &'m M,
    pub sampler: SamplerConfig,
}

impl<M: StateSpaceModel> Objective for MapObjective<'_, M> {
    fn evaluate<'t>(
        &self,
        _tape: &'t Tape,
        params: &Bound<'t>,
        eta: Expr<'t>,
        mode: AdMode,
        draws: &mut Draws,
    ) -> Result<Evaluation<'t>> {
        let guide = Guide::delta(params.get("theta")?);
        let refinement = Refinement { sampler: self.sampler, eta, entropy: EntropyMode::P, mode };
        let est = refined_elbo(&guide, &refinement, self.model, 1, draws)?;
        let z = est.z.constant_row(0);
        let nll = -self.model.log_likelihood(z)?.item();
        Ok(Evaluation { loss: -est.value, monitor: Some(nll) })
    }
}

trait ConstantRow<'t> {
    fn constant_row(self, i: usize) -> Expr<'t>;
}

impl<'t> ConstantRow<'t> for Expr<'t> {
    fn constant_row(self, i: usize) -> Expr<'t> {
        let v = self.row(i).value();
        let n = v.len();
        self.tape().constant(v, Shape::vector(n))
    }
}

/// Random initial parameters `N(0, init_sd²)` for `seed`.
pub fn initial_theta(dim: usize, init_sd: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(3);
    normal_draws(&mut rng, dim).into_iter().map(|e| e * init_sd).collect()
}

/// Pushes `theta` through `sampler` at step size `eta`.
pub fn refine_point<M: StateSpaceModel>(
    model: &M,
    theta: &[f64],
    sampler: &SamplerConfig,
    eta: f64,
    seed: u64,
) -> Result<Vec<f64>> {
    let tape = Tape::new();
    let z0 = tape.constant(theta.to_vec(), Shape::matrix(1, theta.len()));
    let e = tape.scalar(eta);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(4);
    Ok(run_chain(z0, sampler, e, AdMode::Fast, model, &mut rng)?.last().value())
}

/// Maximizes `log p(x | θ_T) + log p(θ_T)` where `θ_T` is the Dirac guide
/// location refined by `config.sampler`.
pub fn fit_statespace<M: StateSpaceModel>(model: &M, config: &StatespaceConfig) -> Result<StatespaceFit> {
    let theta0 = initial_theta(model.dim(), config.init_sd, config.seed);
    let params = ParamStore::new().with("theta", theta0, Shape::vector(model.dim()));
    let settings = FitSettings {
        iterations: config.iterations,
        lr: config.lr,
        eta_lr: config.lr,
        eta0: config.eta,
        mode: config.mode,
        seed: config.seed,
    };
    let objective = MapObjective { model, sampler: config.sampler };
    let report = fit(&objective, params, &settings)?;
    let theta = report.final_params.get("theta").expect("theta").to_vec();
    let refined = refine_point(model, &theta, &config.sampler, report.final_eta, config.seed)?;
    Ok(StatespaceFit { report, theta, refined })
}

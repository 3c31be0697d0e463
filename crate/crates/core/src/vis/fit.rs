use std::time::Instant;

use vis_autodiff::{Expr, Shape, Tape};

use crate::samplers::{AdMode, SamplerConfig};
use crate::targets::TargetDensity;
use crate::vis::adam::Adam;
use crate::vis::elbo::{refined_elbo, Draws, EntropyMode, Refinement};
use crate::vis::guide::Guide;
use crate::vis::params::{Bound, ParamStore};
use crate::{Result, VisError};

pub const ETA_MIN: f64 = 1e-8;
pub const ETA_MAX: f64 = 1.0;

#[derive(Clone, Debug, PartialEq)]
pub struct FitSettings {
    pub iterations: usize,
    /// Adam learning rate for the guide parameters.
    pub lr: f64,
    /// Adam learning rate for `log η`.
    pub eta_lr: f64,
    pub eta0: f64,
    pub mode: AdMode,
    pub seed: u64,
}

impl Default for FitSettings {
    fn default() -> Self {
        FitSettings { iterations: 100, lr: 1e-3, eta_lr: 1e-3, eta0: 1e-3, mode: AdMode::Full, seed: 0 }
    }
}

/// One evaluation of a training objective.
pub struct Evaluation<'t> {
    /// Scalar to minimize (negative rELBO).
    pub loss: Expr<'t>,
    /// Optional extra quantity tracked per iteration.
    pub monitor: Option<f64>,
}

/// A loss built afresh on a new tape every iteration.
pub trait Objective {
    fn evaluate<'t>(
        &self,
        tape: &'t Tape,
        params: &Bound<'t>,
        eta: Expr<'t>,
        mode: AdMode,
        draws: &mut Draws,
    ) -> Result<Evaluation<'t>>;
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    /// Loss before each update.
    pub losses: Vec<f64>,
    /// Step size used in each iteration.
    pub etas: Vec<f64>,
    pub wallclock_ms: Vec<f64>,
    pub monitor: Vec<f64>,
    pub final_params: ParamStore,
    pub final_eta: f64,
    pub seed: u64,
}

/// Runs `settings.iterations` Adam steps on the guide parameters and, in
/// full mode, on `log η` (clamped to `[1e-8, 1]` after each step). Both are
/// updated from the same backward pass.
pub fn fit<O: Objective + ?Sized>(
    objective: &O,
    init: ParamStore,
    settings: &FitSettings,
) -> Result<TrainReport> {
    if settings.iterations == 0 {
        return Err(VisError::arg("at least one iteration is required"));
    }
    if !(settings.eta0 > 0.0) {
        return Err(VisError::arg(format!("initial step size must be positive, got {}", settings.eta0)));
    }
    let mut params = init;
    let mut log_eta = settings.eta0.clamp(ETA_MIN, ETA_MAX).ln();
    let mut adam = Adam::new(params.numel(), settings.lr);
    let mut eta_adam = Adam::new(1, settings.eta_lr);
    let mut draws = Draws::new(settings.seed);
    let mut report = TrainReport {
        losses: Vec::with_capacity(settings.iterations),
        etas: Vec::with_capacity(settings.iterations),
        wallclock_ms: Vec::with_capacity(settings.iterations),
        monitor: Vec::new(),
        final_params: ParamStore::new(),
        final_eta: 0.0,
        seed: settings.seed,
    };

    for iteration in 1..=settings.iterations {
        let start = Instant::now();
        let tape = Tape::new();
        let bound = params.bind(&tape);
        let le = tape.var("log_eta", vec![log_eta], Shape::scalar());
        let eval = objective.evaluate(&tape, &bound, le.exp(), settings.mode, &mut draws)?;
        let loss = eval.loss.item();
        if !loss.is_finite() {
            let mut snapshot = params.snapshot();
            snapshot.push(("log_eta".into(), vec![log_eta]));
            return Err(VisError::NonFiniteLoss { iteration, loss, snapshot });
        }
        let mut inputs = bound.exprs().to_vec();
        inputs.push(le);
        let grads = tape.gradient(eval.loss, &inputs, false)?;

        let flat_grad: Vec<f64> = grads[..grads.len() - 1].iter().flat_map(|g| g.value()).collect();
        let mut flat: Vec<f64> = params.iter().flat_map(|p| p.values.clone()).collect();
        adam.step(&mut flat, &flat_grad);
        let mut offset = 0;
        for p in params.iter_mut() {
            let n = p.values.len();
            p.values.copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }

        report.losses.push(loss);
        report.etas.push(log_eta.exp());
        if let Some(m) = eval.monitor {
            report.monitor.push(m);
        }

        if settings.mode == AdMode::Full {
            let mut x = [log_eta];
            eta_adam.step(&mut x, &[grads[grads.len() - 1].item()]);
            log_eta = x[0].clamp(ETA_MIN.ln(), ETA_MAX.ln());
        }
        report.wallclock_ms.push(start.elapsed().as_secs_f64() * 1e3);
    }
    report.final_params = params;
    report.final_eta = log_eta.exp();
    Ok(report)
}

/// Loss and its gradients from one evaluation of an objective.
#[derive(Clone, Debug, PartialEq)]
pub struct ObjectiveGradient {
    pub loss: f64,
    /// Flattened in parameter-store order.
    pub params: Vec<f64>,
    /// `∂ loss / ∂η`.
    pub eta: f64,
}

/// Evaluates `objective` once at `params` and step size `eta`, with the
/// random streams of `seed`, and differentiates the loss.
pub fn objective_gradient<O: Objective + ?Sized>(
    objective: &O,
    params: &ParamStore,
    eta: f64,
    mode: AdMode,
    seed: u64,
) -> Result<ObjectiveGradient> {
    let tape = Tape::new();
    let bound = params.bind(&tape);
    let e = tape.var("eta", vec![eta], Shape::scalar());
    let eval = objective.evaluate(&tape, &bound, e, mode, &mut Draws::new(seed))?;
    let mut inputs = bound.exprs().to_vec();
    inputs.push(e);
    let grads = tape.gradient(eval.loss, &inputs, false)?;
    let (last, rest) = grads.split_last().expect("eta is always an input");
    Ok(ObjectiveGradient {
        loss: eval.loss.item(),
        params: rest.iter().flat_map(|g| g.value()).collect(),
        eta: last.item(),
    })
}

/// Initial guide parameters for [`VariationalProblem`].
#[derive(Clone, Debug, PartialEq)]
pub enum GuideInit {
    /// Mean-field Gaussian; parameters `mu` and `log_sigma`.
    Gaussian { mu: Vec<f64>, log_sigma: Vec<f64> },
    /// Point mass; parameter `theta`.
    Delta { theta: Vec<f64> },
}

/// A fixed target with a non-amortized guide, refined by one chain.
pub struct VariationalProblem<T> {
    pub target: T,
    pub guide: GuideInit,
    pub sampler: SamplerConfig,
    pub entropy: EntropyMode,
    pub n_samples: usize,
}

impl<T> VariationalProblem<T> {
    pub fn init_params(&self) -> ParamStore {
        match &self.guide {
            GuideInit::Gaussian { mu, log_sigma } => ParamStore::new()
                .with("mu", mu.clone(), Shape::vector(mu.len()))
                .with("log_sigma", log_sigma.clone(), Shape::vector(log_sigma.len())),
            GuideInit::Delta { theta } => {
                ParamStore::new().with("theta", theta.clone(), Shape::vector(theta.len()))
            }
        }
    }

    pub fn guide<'t>(&self, params: &Bound<'t>) -> Result<Guide<'t>> {
        Ok(match self.guide {
            GuideInit::Gaussian { .. } => Guide::gaussian(params.get("mu")?, params.get("log_sigma")?),
            GuideInit::Delta { .. } => Guide::delta(params.get("theta")?),
        })
    }
}

impl<T: for<'t> TargetDensity<'t>> Objective for VariationalProblem<T> {
    fn evaluate<'t>(
        &self,
        _tape: &'t Tape,
        params: &Bound<'t>,
        eta: Expr<'t>,
        mode: AdMode,
        draws: &mut Draws,
    ) -> Result<Evaluation<'t>> {
        let guide = self.guide(params)?;
        let refinement = Refinement { sampler: self.sampler, eta, entropy: self.entropy, mode };
        let est = refined_elbo(&guide, &refinement, &self.target, self.n_samples, draws)?;
        Ok(Evaluation { loss: -est.value, monitor: None })
    }
}

/// Fits a [`VariationalProblem`] from its own initial parameters.
pub fn fit_refined<T: for<'t> TargetDensity<'t>>(
    problem: &VariationalProblem<T>,
    settings: &FitSettings,
) -> Result<TrainReport> {
    fit(problem, problem.init_params(), settings)
}

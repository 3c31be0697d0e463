//! Per-seed experiment runners.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use vis_core::samplers::SamplerConfig;
use vis_core::statespace::data::{alternating_series, read_series_csv, standardize, synthetic_seasonal_series};
use vis_core::statespace::metrics::{accuracy, interval_score, mae, mean_log_score, mean_predictive_entropy};
use vis_core::statespace::{
    dlm_forecast, fit_statespace, hmm_predict, initial_theta, DlmPosterior, DlmSpec, ForecastPoint, HmmParams,
    HmmPosterior, HmmSpec, MapObjective, StateSpaceModel, StatespaceConfig,
};
use vis_core::targets::Funnel;
use vis_core::vae::{
    bayes_classify, load_idx_dataset, pattern_dataset, test_log_likelihood, train_cvae, train_vae, Dataset,
    VaeModel, VaeObjective, VaeTrainConfig,
};
use vis_core::vis::{
    fit_refined, objective_gradient, FitSettings, GuideInit, ParamStore, TrainReport, VariationalProblem,
};

use crate::config::{Experiment, ExperimentConfig};
use crate::{CliError, Result};

/// Length of the alternating series; the last [`HMM_HOLDOUT`] are held out.
pub const HMM_LEN: usize = 105;
pub const HMM_HOLDOUT: usize = 5;
pub const HMM_STATES: usize = 5;
pub const DLM_HORIZON: usize = 24;
/// Training months of the seasonal series.
pub const DLM_TRAIN: usize = 120;
pub const DLM_ALPHA: f64 = 0.05;
pub const SEASONAL_SERIES_SEED: u64 = 12345;

/// Data shared by all seeds of a run.
#[derive(Clone, Debug)]
pub enum RunData {
    /// Generated per seed or fixed by the experiment.
    Builtin,
    Series(Vec<f64>),
    Images { train: Dataset, test: Dataset },
}

fn idx_files(dir: &Path) -> [PathBuf; 4] {
    ["train-images-idx3-ubyte", "train-labels-idx1-ubyte", "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"]
        .map(|f| dir.join(f))
}

/// Reads the data file or directory named by the configuration, if any.
///
/// The DLM reads a `t,value` CSV; the VAE experiments read a directory of
/// IDX files named as in the MNIST distribution.
pub fn load_data(cfg: &ExperimentConfig) -> Result<RunData> {
    let Some(path) = &cfg.data else { return Ok(RunData::Builtin) };
    if !path.exists() {
        return Err(CliError::MissingData(path.display().to_string()));
    }
    match cfg.experiment {
        Experiment::Dlm => Ok(RunData::Series(read_series_csv(path)?)),
        Experiment::Vae | Experiment::Cvae => {
            let files = idx_files(path);
            if let Some(missing) = files.iter().find(|f| !f.exists()) {
                return Err(CliError::MissingData(missing.display().to_string()));
            }
            let mut train = load_idx_dataset(&files[0], &files[1], 0.5)?;
            let mut test = load_idx_dataset(&files[2], &files[3], 0.5)?;
            if cfg.experiment == Experiment::Vae {
                train.labels = None;
                test.labels = None;
            }
            let take = |d: &Dataset, n: usize| d.subset(&(0..n.min(d.len())).collect::<Vec<_>>());
            Ok(RunData::Images { train: take(&train, cfg.train_size), test: take(&test, cfg.test_size) })
        }
        e => Err(CliError::Config(format!("{e} takes no data file"))),
    }
}

/// One DLM forecast horizon with the held-out value, if any.
#[derive(Clone, Debug, PartialEq)]
pub struct Forecast {
    pub points: Vec<ForecastPoint>,
    pub truths: Vec<f64>,
}

/// Outcome of one seed.
#[derive(Clone, Debug)]
pub struct SeedOutcome {
    pub seed: u64,
    pub report: TrainReport,
    pub metrics: BTreeMap<String, f64>,
    pub forecast: Option<Forecast>,
}

pub fn run_seed(cfg: &ExperimentConfig, data: &RunData, seed: u64) -> Result<SeedOutcome> {
    let (report, mut metrics, forecast) = match cfg.experiment {
        Experiment::Funnel => funnel(cfg, seed)?,
        Experiment::Hmm => hmm(cfg, seed)?,
        Experiment::Dlm => dlm(cfg, data, seed)?,
        Experiment::Vae | Experiment::Cvae => vae(cfg, data, seed)?,
    };
    metrics.insert("final_loss".into(), *report.losses.last().expect("at least one iteration"));
    metrics.insert("final_eta".into(), report.final_eta);
    Ok(SeedOutcome { seed, report, metrics, forecast })
}

type Parts = (TrainReport, BTreeMap<String, f64>, Option<Forecast>);

fn funnel_problem(cfg: &ExperimentConfig) -> VariationalProblem<Funnel> {
    VariationalProblem {
        target: Funnel::default(),
        guide: GuideInit::Gaussian { mu: vec![1.0, 1.0], log_sigma: vec![0.0, 0.0] },
        sampler: SamplerConfig::new(cfg.sampler, cfg.t),
        entropy: cfg.entropy,
        n_samples: cfg.n_samples,
    }
}

fn settings(cfg: &ExperimentConfig, iterations: usize, seed: u64) -> FitSettings {
    FitSettings { iterations, lr: cfg.lr, eta_lr: cfg.lr, eta0: cfg.eta, mode: cfg.mode, seed }
}

/// Mean loss over iterations 20–50 (1-based), clipped to the run length.
pub fn mean_loss_20_50(losses: &[f64]) -> Option<f64> {
    let tail = losses.get(19..losses.len().min(50))?;
    (!tail.is_empty()).then(|| tail.iter().sum::<f64>() / tail.len() as f64)
}

fn funnel(cfg: &ExperimentConfig, seed: u64) -> Result<Parts> {
    let report = fit_refined(&funnel_problem(cfg), &settings(cfg, cfg.iters, seed))?;
    let mut m = BTreeMap::new();
    if let Some(v) = mean_loss_20_50(&report.losses) {
        m.insert("mean_loss_20_50".into(), v);
    }
    Ok((report, m, None))
}

fn statespace_config(cfg: &ExperimentConfig, seed: u64) -> StatespaceConfig {
    let mut c = StatespaceConfig::new(cfg.t, cfg.iters, seed);
    c.sampler = SamplerConfig::new(cfg.sampler, cfg.t);
    c.eta = cfg.eta;
    c.mode = cfg.mode;
    c.lr = cfg.lr;
    c
}

fn hmm_model() -> (HmmPosterior, Vec<usize>) {
    let x = alternating_series(HMM_LEN);
    let train = x[..HMM_LEN - HMM_HOLDOUT].to_vec();
    let model = HmmPosterior::new(HmmSpec::new(HMM_STATES, HMM_STATES), train).expect("alternating series is valid");
    (model, x)
}

fn hmm(cfg: &ExperimentConfig, seed: u64) -> Result<Parts> {
    let (model, x) = hmm_model();
    let fit = fit_statespace(&model, &statespace_config(cfg, seed))?;
    let params = HmmParams::from_logits(&model.spec, &fit.refined);
    let split = HMM_LEN - HMM_HOLDOUT;
    let pred = hmm_predict(&params, &x[..split], HMM_HOLDOUT)?;
    let truth = &x[split..];
    let mut m = BTreeMap::new();
    m.insert("accuracy".into(), accuracy(&pred, truth));
    m.insert("predictive_entropy".into(), mean_predictive_entropy(&pred));
    m.insert("log_score".into(), mean_log_score(&pred, truth));
    m.insert("final_nll".into(), *fit.report.monitor.last().expect("monitor per iteration"));
    Ok((fit.report, m, None))
}

/// Standardized series and the number of training points.
pub fn dlm_series(data: &RunData) -> Result<(Vec<f64>, usize)> {
    let raw = match data {
        RunData::Series(s) => s.clone(),
        _ => synthetic_seasonal_series(SEASONAL_SERIES_SEED),
    };
    if raw.len() <= DLM_HORIZON + 1 {
        return Err(CliError::Config(format!("series needs more than {} points, got {}", DLM_HORIZON + 1, raw.len())));
    }
    let n_train = DLM_TRAIN.min(raw.len() - DLM_HORIZON);
    let (y, _, sd) = standardize(&raw, n_train);
    if !(sd > 0.0) {
        return Err(CliError::Config("training part of the series is constant".into()));
    }
    Ok((y, n_train))
}

fn dlm(cfg: &ExperimentConfig, data: &RunData, seed: u64) -> Result<Parts> {
    let (y, n_train) = dlm_series(data)?;
    let model = DlmPosterior::new(DlmSpec::structural(), y[..n_train].to_vec())?;
    let fit = fit_statespace(&model, &statespace_config(cfg, seed))?;
    let points = dlm_forecast(&model.spec, &fit.refined, &y[..n_train], DLM_HORIZON, DLM_ALPHA)?;
    let truths = y[n_train..n_train + DLM_HORIZON].to_vec();
    let means: Vec<f64> = points.iter().map(|p| p.mean).collect();
    let is = points.iter().zip(&truths).map(|(p, &t)| interval_score(p.lower, p.upper, t, DLM_ALPHA)).sum::<f64>()
        / DLM_HORIZON as f64;
    let entropy = points.iter().map(|p| 0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E * p.sd * p.sd).ln())
        .sum::<f64>()
        / DLM_HORIZON as f64;
    let mut m = BTreeMap::new();
    m.insert("mae".into(), mae(&means, &truths));
    m.insert("interval_score".into(), is);
    m.insert("predictive_entropy".into(), entropy);
    m.insert("final_nll".into(), *fit.report.monitor.last().expect("monitor per iteration"));
    Ok((fit.report, m, Some(Forecast { points, truths })))
}

fn vae_model(cfg: &ExperimentConfig, dim: usize, classes: usize) -> VaeModel {
    match cfg.experiment {
        Experiment::Cvae => VaeModel::conditional(dim, cfg.latent, cfg.hidden.clone(), classes),
        _ => VaeModel::new(dim, cfg.latent, cfg.hidden.clone()),
    }
}

/// Training and test sets for `seed`; the toy data are drawn per seed.
pub fn vae_data(cfg: &ExperimentConfig, data: &RunData, seed: u64) -> Result<(Dataset, Dataset)> {
    match data {
        RunData::Images { train, test } => Ok((train.clone(), test.clone())),
        _ => {
            let mut train = pattern_dataset(cfg.train_size, 2, cfg.flip, 100 + seed)?;
            let mut test = pattern_dataset(cfg.test_size, 2, cfg.flip, 900 + seed)?;
            if cfg.experiment == Experiment::Vae {
                train.labels = None;
                test.labels = None;
            }
            Ok((train, test))
        }
    }
}

fn train_config(cfg: &ExperimentConfig, seed: u64) -> VaeTrainConfig {
    VaeTrainConfig {
        t_train: cfg.t,
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        lr: cfg.lr,
        eta0: cfg.eta,
        entropy: cfg.entropy,
        mode: cfg.mode,
        seed,
    }
}

fn vae(cfg: &ExperimentConfig, data: &RunData, seed: u64) -> Result<Parts> {
    let (train, test) = vae_data(cfg, data, seed)?;
    let model = vae_model(cfg, train.dim, train.classes.max(2));
    let tc = train_config(cfg, seed);
    let mut m = BTreeMap::new();
    let report = if cfg.experiment == Experiment::Cvae {
        let report = train_cvae(&model, &train, &tc)?;
        let out = bayes_classify(&model, &report.final_params, &test, cfg.k, cfg.t_test, report.final_eta, seed)?;
        let labels = test.labels.as_ref().expect("labeled test data");
        let hits = out.iter().zip(labels).filter(|(c, &y)| c.label == y).count();
        m.insert("accuracy".into(), hits as f64 / labels.len() as f64);
        report
    } else {
        let report = train_vae(&model, &train, &tc)?;
        let ll = test_log_likelihood(&model, &report.final_params, &test, cfg.k, cfg.t_test, report.final_eta, seed)?;
        m.insert("test_log_likelihood".into(), ll);
        report
    };
    Ok((report, m, None))
}

/// `∂ loss / ∂η` of the experiment's training objective at its initial
/// parameters, for the first seed.
pub fn eta_gradient(cfg: &ExperimentConfig, data: &RunData) -> Result<f64> {
    let seed = cfg.seeds[0];
    let g = match cfg.experiment {
        Experiment::Funnel => {
            let p = funnel_problem(cfg);
            objective_gradient(&p, &p.init_params(), cfg.eta, cfg.mode, seed)?
        }
        Experiment::Hmm => statespace_gradient(&hmm_model().0, cfg, seed)?,
        Experiment::Dlm => {
            let (y, n_train) = dlm_series(data)?;
            statespace_gradient(&DlmPosterior::new(DlmSpec::structural(), y[..n_train].to_vec())?, cfg, seed)?
        }
        Experiment::Vae | Experiment::Cvae => {
            let (train, _) = vae_data(cfg, data, seed)?;
            let model = vae_model(cfg, train.dim, train.classes.max(2));
            let objective = VaeObjective::new(&model, &train, &train_config(cfg, seed))?;
            objective_gradient(&objective, &model.init_params(seed), cfg.eta, cfg.mode, seed)?
        }
    };
    Ok(g.eta)
}

fn statespace_gradient<M: StateSpaceModel>(
    model: &M,
    cfg: &ExperimentConfig,
    seed: u64,
) -> Result<vis_core::vis::ObjectiveGradient> {
    let sc = statespace_config(cfg, seed);
    let theta = initial_theta(model.dim(), sc.init_sd, seed);
    let params = ParamStore::new().with("theta", theta, vec![model.dim()]);
    let objective = MapObjective { model, sampler: sc.sampler };
    Ok(objective_gradient(&objective, &params, cfg.eta, cfg.mode, seed)?)
}

//! Flat `key = value` experiment configuration.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use vis_core::samplers::{AdMode, SamplerKind};
use vis_core::vis::EntropyMode;

use crate::{CliError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Experiment {
    Funnel,
    Hmm,
    Dlm,
    Vae,
    Cvae,
}

impl Experiment {
    pub const ALL: [Experiment; 5] =
        [Experiment::Funnel, Experiment::Hmm, Experiment::Dlm, Experiment::Vae, Experiment::Cvae];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::Funnel => "funnel",
            Experiment::Hmm => "hmm",
            Experiment::Dlm => "dlm",
            Experiment::Vae => "vae",
            Experiment::Cvae => "cvae",
        }
    }

    fn is_statespace(self) -> bool {
        matches!(self, Experiment::Hmm | Experiment::Dlm)
    }

    fn is_vae(self) -> bool {
        matches!(self, Experiment::Vae | Experiment::Cvae)
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Experiment {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Experiment::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| "expected one of funnel, hmm, dlm, vae, cvae".into())
    }
}

pub fn entropy_name(e: EntropyMode) -> &'static str {
    match e {
        EntropyMode::P => "p",
        EntropyMode::Mc => "mc",
        EntropyMode::G => "g",
        EntropyMode::Fp => "fp",
    }
}

pub fn parse_entropy(s: &str) -> std::result::Result<EntropyMode, String> {
    match s {
        "p" => Ok(EntropyMode::P),
        "mc" => Ok(EntropyMode::Mc),
        "g" => Ok(EntropyMode::G),
        "fp" => Ok(EntropyMode::Fp),
        _ => Err("expected one of p, mc, g, fp".into()),
    }
}

pub fn mode_name(m: AdMode) -> &'static str {
    match m {
        AdMode::Full => "full",
        AdMode::Fast => "fast",
    }
}

pub fn parse_mode(s: &str) -> std::result::Result<AdMode, String> {
    match s {
        "full" => Ok(AdMode::Full),
        "fast" => Ok(AdMode::Fast),
        _ => Err("expected full or fast".into()),
    }
}

pub fn sampler_name(k: SamplerKind) -> &'static str {
    match k {
        SamplerKind::Sgd => "sgd",
        SamplerKind::Sgld => "sgld",
        SamplerKind::FpFlow => "fp",
    }
}

pub fn parse_sampler(s: &str) -> std::result::Result<SamplerKind, String> {
    match s {
        "sgd" => Ok(SamplerKind::Sgd),
        "sgld" => Ok(SamplerKind::Sgld),
        "fp" => Ok(SamplerKind::FpFlow),
        _ => Err("expected one of sgd, sgld, fp".into()),
    }
}

/// Sampler that carries the density an entropy mode needs.
pub fn sampler_for(entropy: EntropyMode) -> SamplerKind {
    match entropy {
        EntropyMode::P | EntropyMode::Mc => SamplerKind::Sgld,
        EntropyMode::G => SamplerKind::Sgd,
        EntropyMode::Fp => SamplerKind::FpFlow,
    }
}

/// Raw settings before defaults are applied.
pub type Settings = BTreeMap<String, String>;

pub const KEYS: [&str; 21] = [
    "experiment",
    "t",
    "t_test",
    "entropy",
    "mode",
    "sampler",
    "eta",
    "lr",
    "iters",
    "epochs",
    "seeds",
    "data",
    "out",
    "n_samples",
    "hidden",
    "latent",
    "train_size",
    "test_size",
    "flip",
    "k",
    "batch_size",
];

/// Reads `key = value` lines; `#` starts a comment.
pub fn parse_settings(text: &str, origin: &str) -> Result<Settings> {
    let mut out = Settings::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("{origin}: line {}: expected `key = value`", i + 1)))?;
        let k = k.trim().replace('-', "_");
        if !KEYS.contains(&k.as_str()) {
            return Err(CliError::Config(format!("{origin}: line {}: unknown key `{k}`", i + 1)));
        }
        out.insert(k, v.trim().to_string());
    }
    Ok(out)
}

pub fn read_settings(path: &Path) -> Result<Settings> {
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Io { path: path.display().to_string(), source })?;
    parse_settings(&text, &path.display().to_string())
}

/// A fully resolved, validated experiment configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    /// Refinement steps during training.
    pub t: usize,
    /// Refinement steps at test time (VAE experiments).
    pub t_test: usize,
    pub entropy: EntropyMode,
    pub mode: AdMode,
    pub sampler: SamplerKind,
    /// Initial step size.
    pub eta: f64,
    pub lr: f64,
    /// Optimizer iterations (funnel and state-space experiments).
    pub iters: usize,
    /// Training epochs (VAE experiments).
    pub epochs: usize,
    pub seeds: Vec<u64>,
    pub data: Option<PathBuf>,
    pub out: PathBuf,
    /// Monte Carlo samples per funnel iteration.
    pub n_samples: usize,
    pub hidden: Vec<usize>,
    pub latent: usize,
    pub train_size: usize,
    pub test_size: usize,
    /// Pixel flip probability of the toy pattern data.
    pub flip: f64,
    /// Importance or classification draws per example.
    pub k: usize,
    pub batch_size: usize,
}

fn get<T: FromStr>(s: &Settings, key: &str, default: T) -> Result<T>
where
    T::Err: fmt::Display,
{
    match s.get(key) {
        None => Ok(default),
        Some(v) => v.parse().map_err(|e| CliError::Config(format!("invalid value `{v}` for `{key}`: {e}"))),
    }
}

fn get_with<T>(s: &Settings, key: &str, default: T, parse: fn(&str) -> std::result::Result<T, String>) -> Result<T> {
    match s.get(key) {
        None => Ok(default),
        Some(v) => parse(v).map_err(|e| CliError::Config(format!("invalid value `{v}` for `{key}`: {e}"))),
    }
}

fn parse_list<T: FromStr>(v: &str) -> std::result::Result<Vec<T>, String>
where
    T::Err: fmt::Display,
{
    v.split(',')
        .map(str::trim)
        .filter(|x| !x.is_empty())
        .map(|x| x.parse::<T>().map_err(|e| e.to_string()))
        .collect()
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

impl ExperimentConfig {
    /// Applies per-experiment defaults to `s` and validates the result.
    pub fn from_settings(s: &Settings) -> Result<Self> {
        if let Some(k) = s.keys().find(|k| !KEYS.contains(&k.as_str())) {
            return Err(CliError::Config(format!("unknown key `{k}`")));
        }
        let experiment: Experiment = match s.get("experiment") {
            Some(v) => v.parse().map_err(|e| CliError::Config(format!("invalid value `{v}` for `experiment`: {e}")))?,
            None => return Err(CliError::Config("no experiment given".into())),
        };
        let t = get(s, "t", 0usize)?;
        let refined = t > 0;
        let (entropy, mode, eta, lr, iters, epochs) = match experiment {
            Experiment::Funnel => (EntropyMode::Mc, AdMode::Full, 0.1, 0.05, 50, 1),
            Experiment::Hmm => (EntropyMode::P, AdMode::Fast, 0.2, 0.01, if refined { 20 } else { 50 }, 1),
            Experiment::Dlm => (EntropyMode::P, AdMode::Fast, 0.1, 0.01, if refined { 4 } else { 10 }, 1),
            Experiment::Vae | Experiment::Cvae => {
                (EntropyMode::Mc, AdMode::Full, 5e-5, 0.01, 1, if refined { 10 } else { 15 })
            }
        };
        let entropy = get_with(s, "entropy", entropy, parse_entropy)?;
        // State-space metrics are reported as medians over five seeds.
        let seeds = if experiment.is_statespace() { vec![0, 1, 2, 3, 4] } else { vec![0] };
        let sampler_default = if experiment.is_statespace() { SamplerKind::Sgd } else { sampler_for(entropy) };
        let cfg = ExperimentConfig {
            experiment,
            t,
            t_test: get(s, "t_test", 0)?,
            entropy,
            mode: get_with(s, "mode", mode, parse_mode)?,
            sampler: get_with(s, "sampler", sampler_default, parse_sampler)?,
            eta: get(s, "eta", eta)?,
            lr: get(s, "lr", lr)?,
            iters: get(s, "iters", iters)?,
            epochs: get(s, "epochs", epochs)?,
            seeds: get_with(s, "seeds", seeds, parse_list)?,
            data: s.get("data").filter(|v| !v.is_empty()).map(PathBuf::from),
            out: s.get("out").map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs").join(experiment.name())),
            n_samples: get(s, "n_samples", 10)?,
            hidden: get_with(s, "hidden", vec![32, 32], parse_list)?,
            latent: get(s, "latent", 2)?,
            train_size: get(s, "train_size", 2000)?,
            test_size: get(s, "test_size", 500)?,
            flip: get(s, "flip", 0.4)?,
            k: get(s, "k", 5)?,
            batch_size: get(s, "batch_size", 50)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Every key with its resolved value.
    pub fn to_settings(&self) -> Settings {
        let mut s = Settings::new();
        let mut put = |k: &str, v: String| {
            s.insert(k.to_string(), v);
        };
        put("experiment", self.experiment.name().into());
        put("t", self.t.to_string());
        put("t_test", self.t_test.to_string());
        put("entropy", entropy_name(self.entropy).into());
        put("mode", mode_name(self.mode).into());
        put("sampler", sampler_name(self.sampler).into());
        put("eta", self.eta.to_string());
        put("lr", self.lr.to_string());
        put("iters", self.iters.to_string());
        put("epochs", self.epochs.to_string());
        put("seeds", join(&self.seeds));
        put("data", self.data.as_ref().map(|p| p.display().to_string()).unwrap_or_default());
        put("out", self.out.display().to_string());
        put("n_samples", self.n_samples.to_string());
        put("hidden", join(&self.hidden));
        put("latent", self.latent.to_string());
        put("train_size", self.train_size.to_string());
        put("test_size", self.test_size.to_string());
        put("flip", self.flip.to_string());
        put("k", self.k.to_string());
        put("batch_size", self.batch_size.to_string());
        s
    }

    /// Small budgets that exercise every code path of an experiment.
    pub fn smoke(experiment: Experiment) -> Self {
        let mut s = Settings::new();
        s.insert("experiment".into(), experiment.name().into());
        s.insert("t".into(), "1".into());
        s.insert("seeds".into(), "0".into());
        match experiment {
            Experiment::Funnel => {
                s.insert("iters".into(), "5".into());
            }
            Experiment::Hmm | Experiment::Dlm => {
                s.insert("iters".into(), "2".into());
            }
            Experiment::Vae | Experiment::Cvae => {
                s.insert("t_test".into(), "1".into());
                s.insert("epochs".into(), "1".into());
                s.insert("train_size".into(), "100".into());
                s.insert("test_size".into(), "20".into());
                s.insert("hidden".into(), "8".into());
            }
        }
        Self::from_settings(&s).expect("smoke settings are valid")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CliError::Config(m));
        let (e, k) = (self.entropy, self.sampler);
        if self.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) || !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("eta and lr must be positive".into());
        }
        if self.experiment.is_statespace() {
            if e != EntropyMode::P {
                return bad(format!(
                    "{} uses a point-mass guide; only --entropy p applies, got {}",
                    self.experiment,
                    entropy_name(e)
                ));
            }
            if k == SamplerKind::FpFlow {
                return bad(format!("{} refines a single point; the fp sampler needs particles", self.experiment));
            }
        } else if self.experiment.is_vae() {
            if e != EntropyMode::Mc || k != SamplerKind::Sgld {
                return bad(format!("{} trains with --entropy mc and --sampler sgld", self.experiment));
            }
        } else if e != EntropyMode::P && k != sampler_for(e) {
            return bad(format!(
                "--entropy {} needs --sampler {}, got {}",
                entropy_name(e),
                sampler_name(sampler_for(e)),
                sampler_name(k)
            ));
        } else if e == EntropyMode::Fp && self.n_samples < 2 {
            return bad("--entropy fp needs n_samples >= 2".into());
        }
        if self.iters == 0 || self.epochs == 0 {
            return bad("iters and epochs must be at least 1".into());
        }
        if self.experiment.is_vae() {
            if self.hidden.is_empty() || self.latent == 0 || self.k == 0 || self.batch_size == 0 {
                return bad("hidden, latent, k and batch_size must be positive".into());
            }
            if self.train_size == 0 || self.test_size == 0 {
                return bad("train_size and test_size must be positive".into());
            }
            if !(0.0..=1.0).contains(&self.flip) {
                return bad(format!("flip must lie in [0, 1], got {}", self.flip));
            }
        }
        if self.experiment == Experiment::Funnel && self.n_samples == 0 {
            return bad("n_samples must be at least 1".into());
        }
        Ok(())
    }
}

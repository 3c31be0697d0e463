//! Run driver and artifact files.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use vis_core::statespace::data::write_forecast_csv;

use crate::config::{ExperimentConfig, Settings};
use crate::experiments::{load_data, run_seed, SeedOutcome};
use crate::{CliError, Result};

pub const MANIFEST: &str = "manifest.json";
pub const METRICS: &str = "metrics.json";
pub const SUMMARY: &str = "summary.json";

pub fn trace_name(seed: u64) -> String {
    format!("trace_seed{seed}.csv")
}

pub fn timing_name(seed: u64) -> String {
    format!("timing_seed{seed}.csv")
}

pub fn forecast_name(seed: u64) -> String {
    format!("forecast_seed{seed}.csv")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub experiment: String,
    pub seeds: Vec<u64>,
    /// Every configuration key with its resolved value.
    pub config: Settings,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedMetrics {
    pub seed: u64,
    pub metrics: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub experiment: String,
    /// Median over seeds.
    pub median: BTreeMap<String, f64>,
    pub per_seed: Vec<SeedMetrics>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub experiment: String,
    pub t: usize,
    pub seeds: Vec<u64>,
    pub traces: Vec<String>,
    pub median: BTreeMap<String, f64>,
    pub total_wallclock_ms: f64,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.display().to_string(), source }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(io_err(path))?))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("plain data serializes");
    text.push('\n');
    std::fs::write(path, text).map_err(io_err(path))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| CliError::Json { path: path.display().to_string(), message: e.to_string() })
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> CliError + '_ {
    move |e| CliError::Io { path: path.display().to_string(), source: e.into() }
}

/// `iteration,loss,eta`, one row per optimizer step.
pub fn write_trace(path: &Path, outcome: &SeedOutcome) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(["iteration", "loss", "eta"]).map_err(csv_err(path))?;
    for (i, (loss, eta)) in outcome.report.losses.iter().zip(&outcome.report.etas).enumerate() {
        w.write_record([(i + 1).to_string(), loss.to_string(), eta.to_string()]).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// `iteration,wallclock_ms`, kept apart from the trace so that traces are
/// reproducible byte for byte.
pub fn write_timing(path: &Path, outcome: &SeedOutcome) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(["iteration", "wallclock_ms"]).map_err(csv_err(path))?;
    for (i, ms) in outcome.report.wallclock_ms.iter().enumerate() {
        w.write_record([(i + 1).to_string(), format!("{ms:.3}")]).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Per-metric median over the seeds that report it.
pub fn median_metrics(outcomes: &[SeedOutcome]) -> BTreeMap<String, f64> {
    let mut by_key: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for o in outcomes {
        for (k, v) in &o.metrics {
            by_key.entry(k.clone()).or_default().push(*v);
        }
    }
    by_key.into_iter().map(|(k, v)| (k, median(v))).collect()
}

fn threads() -> Option<usize> {
    std::env::var("VIS_THREADS").ok().and_then(|v| v.parse().ok()).filter(|&n| n > 0)
}

/// Runs every seed without writing anything.
pub fn run_seeds(cfg: &ExperimentConfig) -> Result<Vec<SeedOutcome>> {
    cfg.validate()?;
    let data = load_data(cfg)?;
    let work = || cfg.seeds.par_iter().map(|&s| run_seed(cfg, &data, s)).collect::<Result<Vec<_>>>();
    match threads() {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Config(format!("cannot start {n} worker threads: {e}")))?
            .install(work),
        None => work(),
    }
}

/// Result of [`run`]: the per-seed outcomes and the output directory.
pub struct RunOutput {
    pub dir: PathBuf,
    pub outcomes: Vec<SeedOutcome>,
    pub summary: Summary,
}

/// Runs all seeds and writes traces, timings, forecasts, metrics, the
/// summary and the manifest into `cfg.out`.
pub fn run(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let outcomes = run_seeds(cfg)?;
    let dir = cfg.out.clone();
    std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    for o in &outcomes {
        write_trace(&dir.join(trace_name(o.seed)), o)?;
        write_timing(&dir.join(timing_name(o.seed)), o)?;
        if let Some(f) = &o.forecast {
            let path = dir.join(forecast_name(o.seed));
            write_forecast_csv(create(&path)?, &f.points, &f.truths).map_err(io_err(&path))?;
        }
    }
    let median = median_metrics(&outcomes);
    let metrics = Metrics {
        experiment: cfg.experiment.name().into(),
        median: median.clone(),
        per_seed: outcomes.iter().map(|o| SeedMetrics { seed: o.seed, metrics: o.metrics.clone() }).collect(),
    };
    write_json(&dir.join(METRICS), &metrics)?;
    let summary = Summary {
        experiment: cfg.experiment.name().into(),
        t: cfg.t,
        seeds: cfg.seeds.clone(),
        traces: cfg.seeds.iter().map(|&s| trace_name(s)).collect(),
        median,
        total_wallclock_ms: outcomes.iter().flat_map(|o| &o.report.wallclock_ms).sum(),
    };
    write_json(&dir.join(SUMMARY), &summary)?;
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        experiment: cfg.experiment.name().into(),
        seeds: cfg.seeds.clone(),
        config: cfg.to_settings(),
    };
    write_json(&dir.join(MANIFEST), &manifest)?;
    Ok(RunOutput { dir, outcomes, summary })
}

/// Reads a manifest written by [`run`].
pub fn read_manifest(dir_or_file: &Path) -> Result<Manifest> {
    let path = if dir_or_file.is_dir() { dir_or_file.join(MANIFEST) } else { dir_or_file.to_path_buf() };
    if !path.exists() {
        let dir = if dir_or_file.is_dir() { dir_or_file } else { dir_or_file.parent().unwrap_or(dir_or_file) };
        return Err(CliError::MissingManifest(dir.display().to_string()));
    }
    read_json(&path)
}

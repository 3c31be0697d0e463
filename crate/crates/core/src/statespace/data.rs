//! Bundled series and CSV input/output.

use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::samplers::normal_draws;
use crate::statespace::dlm::ForecastPoint;
use crate::{Result, VisError};

/// `0, 1, 0, 1, …` of length `len`.
pub fn alternating_series(len: usize) -> Vec<usize> {
    (0..len).map(|t| t % 2).collect()
}

/// Twelve years of a monthly series with a linear trend, two seasonal
/// harmonics, a slow random walk and observation noise.
pub fn synthetic_seasonal_series(seed: u64) -> Vec<f64> {
    let len = 144;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let walk = normal_draws(&mut rng, len);
    let noise = normal_draws(&mut rng, len);
    let mut level = 0.0;
    (0..len)
        .map(|t| {
            let tf = t as f64;
            level += 0.05 * walk[t];
            0.03 * tf
                + 1.5 * (2.0 * std::f64::consts::PI * tf / 12.0).sin()
                + 0.6 * (4.0 * std::f64::consts::PI * tf / 12.0).cos()
                + level
                + 0.1 * noise[t]
        })
        .collect()
}

/// Shifts and scales the whole series by the mean and (population)
/// standard deviation of its first `n_train` points.
pub fn standardize(series: &[f64], n_train: usize) -> (Vec<f64>, f64, f64) {
    let head = &series[..n_train.min(series.len())];
    let mean = head.iter().sum::<f64>() / head.len() as f64;
    let var = head.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / head.len() as f64;
    let sd = var.sqrt();
    (series.iter().map(|x| (x - mean) / sd).collect(), mean, sd)
}

/// Reads the `value` column of a `t,value` CSV file.
pub fn read_series_csv(path: &Path) -> Result<Vec<f64>> {
    let shown = path.display().to_string();
    let file = std::fs::File::open(path).map_err(|source| VisError::Io { path: shown.clone(), source })?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(file);
    let parse_err = |line: usize, message: String| VisError::Parse { path: shown.clone(), line, message };
    let headers = reader.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
    let col = headers
        .iter()
        .position(|h| h == "value")
        .ok_or_else(|| parse_err(1, "missing `value` column".into()))?;
    if !headers.iter().any(|h| h == "t") {
        return Err(parse_err(1, "missing `t` column".into()));
    }
    let mut out = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| parse_err(line, e.to_string()))?;
        let raw = rec.get(col).ok_or_else(|| parse_err(line, "missing value".into()))?;
        let v: f64 = raw.parse().map_err(|_| parse_err(line, format!("cannot parse `{raw}` as a number")))?;
        if !v.is_finite() {
            return Err(parse_err(line, format!("non-finite value `{raw}`")));
        }
        out.push(v);
    }
    if out.is_empty() {
        return Err(parse_err(1, "no data rows".into()));
    }
    Ok(out)
}

/// Writes `horizon,mean,sd,lower,upper,truth`; `truth` is empty when
/// unknown.
pub fn write_forecast_csv<W: Write>(out: W, points: &[ForecastPoint], truths: &[f64]) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["horizon", "mean", "sd", "lower", "upper", "truth"])?;
    for (i, p) in points.iter().enumerate() {
        let truth = truths.get(i).map(|t| t.to_string()).unwrap_or_default();
        w.write_record([
            p.horizon.to_string(),
            p.mean.to_string(),
            p.sd.to_string(),
            p.lower.to_string(),
            p.upper.to_string(),
            truth,
        ])?;
    }
    w.flush()
}

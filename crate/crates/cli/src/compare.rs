//! Side-by-side comparison of two run directories.

use std::fmt::Write;
use std::path::Path;

use crate::output::{read_json, read_manifest, Metrics, METRICS};
use crate::{CliError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Better {
    A,
    B,
    Tie,
    /// The metric has no preferred direction.
    Neither,
}

/// `Some(true)` when lower values are better.
pub fn lower_is_better(metric: &str) -> Option<bool> {
    match metric {
        "final_loss" | "mean_loss_20_50" | "final_nll" | "mae" | "interval_score" | "predictive_entropy" => {
            Some(true)
        }
        "accuracy" | "log_score" | "test_log_likelihood" => Some(false),
        _ => None,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Row {
    pub metric: String,
    pub a: f64,
    pub b: f64,
    /// `b - a`.
    pub delta: f64,
    pub better: Better,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Comparison {
    pub experiment: String,
    pub rows: Vec<Row>,
    /// Run that is at least as good on every directed metric and strictly
    /// better on one.
    pub dominant: Option<Better>,
}

pub fn compare(dir_a: &Path, dir_b: &Path) -> Result<Comparison> {
    let (ma, mb) = (read_manifest(dir_a)?, read_manifest(dir_b)?);
    if ma.experiment != mb.experiment {
        return Err(CliError::Mismatch(format!(
            "cannot compare a {} run with a {} run",
            ma.experiment, mb.experiment
        )));
    }
    let a: Metrics = read_json(&dir_a.join(METRICS))?;
    let b: Metrics = read_json(&dir_b.join(METRICS))?;
    let rows: Vec<Row> = a
        .median
        .iter()
        .filter_map(|(k, &va)| b.median.get(k).map(|&vb| (k, va, vb)))
        .map(|(k, va, vb)| {
            let better = match lower_is_better(k) {
                None => Better::Neither,
                Some(_) if va == vb => Better::Tie,
                Some(lower) => {
                    if (vb < va) == lower {
                        Better::B
                    } else {
                        Better::A
                    }
                }
            };
            Row { metric: k.clone(), a: va, b: vb, delta: vb - va, better }
        })
        .collect();
    let directed: Vec<Better> = rows.iter().map(|r| r.better).filter(|b| *b != Better::Neither).collect();
    let dominant = if directed.iter().all(|b| *b == Better::Tie) {
        None
    } else if directed.iter().all(|b| matches!(b, Better::B | Better::Tie)) {
        Some(Better::B)
    } else if directed.iter().all(|b| matches!(b, Better::A | Better::Tie)) {
        Some(Better::A)
    } else {
        None
    };
    Ok(Comparison { experiment: ma.experiment, rows, dominant })
}

impl Comparison {
    pub fn render(&self, name_a: &str, name_b: &str) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "experiment: {}", self.experiment);
        let _ = writeln!(s, "{:<22} {:>14} {:>14} {:>14}  better", "metric", "a", "b", "delta (b-a)");
        for r in &self.rows {
            let better = match r.better {
                Better::A => "a",
                Better::B => "b",
                Better::Tie => "=",
                Better::Neither => "-",
            };
            let _ = writeln!(s, "{:<22} {:>14.6} {:>14.6} {:>14.6}  {better}", r.metric, r.a, r.b, r.delta);
        }
        let verdict = match self.dominant {
            Some(Better::A) => format!("a ({name_a}) dominates"),
            Some(Better::B) => format!("b ({name_b}) dominates"),
            _ if self.rows.iter().all(|r| r.delta == 0.0) => "identical".to_string(),
            _ => "neither run dominates".to_string(),
        };
        let _ = writeln!(s, "{verdict}");
        s
    }
}

use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn vis(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vis")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = vis(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn err(args: &[&str]) -> String {
    let out = vis(args);
    assert_eq!(out.status.code(), Some(2), "{args:?}");
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert_eq!(stderr.trim_end().lines().count(), 1, "{stderr}");
    stderr
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn funnel_run_writes_traces_summary_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("f");
    ok(&["run", "funnel", "--t", "1", "--mode", "full", "--entropy", "mc", "--seeds", "0,1,2", "--iters", "5", "--out", path(&out)]);
    for s in 0..3 {
        let trace = std::fs::read_to_string(out.join(format!("trace_seed{s}.csv"))).unwrap();
        assert_eq!(trace.lines().next(), Some("iteration,loss,eta"));
        assert_eq!(trace.lines().count(), 6);
        assert!(out.join(format!("timing_seed{s}.csv")).exists());
    }
    let summary = json(&out.join("summary.json"));
    assert_eq!(summary["seeds"].as_array().unwrap().len(), 3);
    let manifest = json(&out.join("manifest.json"));
    assert_eq!(manifest["experiment"], "funnel");
    assert_eq!(manifest["config"]["t"], "1");
}

#[test]
fn invalid_combination_is_a_single_line_error() {
    let e = err(&["run", "hmm", "--entropy", "mc", "--out", "unused"]);
    assert!(e.starts_with("error: "), "{e}");
    let e = err(&["run", "vae", "--sampler", "sgd", "--out", "unused"]);
    assert!(e.starts_with("error: "), "{e}");
}

#[test]
fn missing_data_names_the_path() {
    let e = err(&["run", "dlm", "--data", "/no/such/mauna_loa.csv", "--out", "unused"]);
    assert!(e.contains("/no/such/mauna_loa.csv"), "{e}");
}

#[test]
fn unknown_experiment_is_rejected() {
    err(&["run", "galaxy"]);
}

#[test]
fn from_manifest_reproduces_the_trace() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&["run", "funnel", "--t", "1", "--iters", "8", "--seeds", "3", "--out", path(&a)]);
    ok(&["run", "--from-manifest", path(&a), "--out", path(&b)]);
    let read = |d: &Path| std::fs::read(d.join("trace_seed3.csv")).unwrap();
    assert_eq!(read(&a), read(&b));
}

#[test]
fn compare_identical_runs_reports_zero_deltas() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        ok(&["run", "funnel", "--t", "1", "--iters", "5", "--out", path(d)]);
    }
    let table = ok(&["compare", path(&a), path(&b)]);
    assert!(table.trim_end().ends_with("identical"), "{table}");
    let c = vis_cli::compare(&a, &b).unwrap();
    assert!(!c.rows.is_empty());
    assert!(c.rows.iter().all(|r| r.delta == 0.0));
}

#[test]
fn compare_funnel_t1_against_t0_reports_lower_loss() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("t0"), dir.path().join("t1"));
    ok(&["run", "funnel", "--t", "0", "--out", path(&a)]);
    ok(&["run", "funnel", "--t", "1", "--out", path(&b)]);
    let c = vis_cli::compare(&a, &b).unwrap();
    let row = c.rows.iter().find(|r| r.metric == "mean_loss_20_50").unwrap();
    assert!(row.delta < 0.0, "{row:?}");
    assert_eq!(row.better, vis_cli::Better::B);
}

#[test]
fn compare_rejects_mismatched_experiments_and_missing_manifests() {
    let dir = tempfile::tempdir().unwrap();
    let (f, h) = (dir.path().join("f"), dir.path().join("h"));
    ok(&["run", "funnel", "--iters", "3", "--out", path(&f)]);
    ok(&["run", "hmm", "--iters", "2", "--out", path(&h)]);
    err(&["compare", path(&f), path(&h)]);
    let empty = dir.path().join("empty");
    std::fs::create_dir(&empty).unwrap();
    let e = err(&["compare", path(&f), path(&empty)]);
    assert!(e.contains(path(&empty)), "{e}");
}

#[test]
fn dlm_forecast_has_twenty_four_rows() {
    let dir = tempfile::tempdir().unwrap();
    let series = dir.path().join("mauna_loa.csv");
    let mut text = String::from("t,value\n");
    for t in 0..150 {
        let x = 315.0 + 0.12 * t as f64 + 3.0 * (2.0 * std::f64::consts::PI * t as f64 / 12.0).sin();
        text.push_str(&format!("{t},{x}\n"));
    }
    std::fs::write(&series, text).unwrap();
    let out = dir.path().join("dlm");
    ok(&["run", "dlm", "--data", path(&series), "--t", "1", "--out", path(&out)]);
    let forecast = std::fs::read_to_string(out.join("forecast_seed0.csv")).unwrap();
    assert_eq!(forecast.lines().count(), 25);
}

#[test]
fn hmm_refinement_does_not_lower_accuracy() {
    let dir = tempfile::tempdir().unwrap();
    let acc = |t: &str| {
        let out = dir.path().join(format!("t{t}"));
        ok(&["run", "hmm", "--t", t, "--out", path(&out)]);
        json(&out.join("metrics.json"))["median"]["accuracy"].as_f64().unwrap()
    };
    assert!(acc("1") >= acc("0"));
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("funnel.conf");
    std::fs::write(&file, "# funnel sweep\nexperiment = funnel\nt = 0\niters = 4\nseeds = 1,2\n").unwrap();
    let out = dir.path().join("run");
    ok(&["run", "--config", path(&file), "--t", "1", "--out", path(&out)]);
    let manifest = json(&out.join("manifest.json"));
    assert_eq!(manifest["config"]["t"], "1");
    assert_eq!(manifest["config"]["iters"], "4");
    assert_eq!(manifest["seeds"], serde_json::json!([1, 2]));
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("bad.conf");
    std::fs::write(&file, "experiment = funnel\nlearning_rate = 0.1\n").unwrap();
    let e = err(&["run", "--config", path(&file)]);
    assert!(e.contains("learning_rate"), "{e}");
}

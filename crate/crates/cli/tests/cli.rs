use std::fs;
use std::path::Path;
use std::process::Command;

use irmap::data::{ns_rate, Dataset, FactorPathSpec};
use serde_json::Value;

fn irmap(dir: &Path, args: &[&str]) -> i32 {
    let status = Command::new(env!("CARGO_BIN_EXE_irmap"))
        .args(args)
        .args(["--out", dir.to_str().unwrap()])
        .current_dir(dir)
        .status()
        .unwrap();
    status.code().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

const CONSTANT: &str = r#"{"model":{"family":"kriging"},
  "synth":{"days":60,"noise_sd":0.0,"factors":{"base":{"beta0":2.0,"beta1":0.0,"beta2":0.0,"lambda":0.06},"level_sd":0.0}}}"#;

#[test]
fn synth_round_trips_and_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert_eq!(irmap(a.path(), &["synth", "--seed", "5", "--days", "40"]), 0);
    assert_eq!(irmap(b.path(), &["synth", "--seed", "5", "--days", "40"]), 0);
    let bytes = fs::read(a.path().join("panel.csv")).unwrap();
    assert_eq!(bytes, fs::read(b.path().join("panel.csv")).unwrap());
    let ds = Dataset::load_panel(&bytes[..]).unwrap();
    assert_eq!((ds.dates.len(), ds.tenors.len(), ds.len()), (40, 13, 520));
}

#[test]
fn noiseless_synth_matches_formula() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(irmap(dir.path(), &["synth", "--seed", "8", "--days", "30", "--noise", "0"]), 0);
    let ds = Dataset::load_panel(fs::File::open(dir.path().join("panel.csv")).unwrap()).unwrap();
    let paths = FactorPathSpec::default().generate(30, 8).unwrap();
    for o in &ds.observations {
        let want = ns_rate(&paths[o.day_index as usize], o.maturity_months);
        assert!((o.rate - want).abs() < 1e-12, "{} vs {want}", o.rate);
    }
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(irmap(d, &["fit", "--panel", "missing.csv"]), 3);
    let bad = write(d, "bad.json", r#"{"model":{"family":"svr","c":0}}"#);
    assert_eq!(irmap(d, &["synth", "--days", "20"]), 0);
    assert_eq!(irmap(d, &["fit", "--config", &bad, "--panel", "panel.csv"]), 2);
    let typo = write(d, "typo.json", r#"{"grdi":{"nx":2,"ny":2}}"#);
    assert_eq!(irmap(d, &["synth", "--config", &typo]), 2);
    assert_eq!(irmap(d, &["fit", "--panel", "panel.csv", "--model", "forest"]), 2);
    assert_eq!(irmap(d, &["fit", "--panel", "panel.csv"]), 0);
    assert_eq!(irmap(d, &["forecast", "--model", "model.json", "--horizon", "0"]), 2);
    assert_eq!(irmap(d, &["map", "--model", "model.json", "--nx", "1"]), 2);
    assert_eq!(irmap(d, &["map", "--model", "panel.csv"]), 3);
    assert_eq!(irmap(d, &["frobnicate"]), 2);
    write(d, "garbled.csv", "date,1M\n2005-01-01,abc\n");
    assert_eq!(irmap(d, &["fit", "--panel", "garbled.csv"]), 3);
}

#[test]
fn fit_and_map_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(irmap(d, &["synth", "--days", "30"]), 0);
    assert_eq!(irmap(d, &["fit", "--panel", "panel.csv", "--model", "idw"]), 0);
    let metrics: Value = serde_json::from_slice(&fs::read(d.join("metrics.json")).unwrap()).unwrap();
    assert!(metrics["test"]["rmse"].as_f64().unwrap().is_finite());
    assert_eq!(irmap(d, &["map", "--model", "model.json", "--nx", "7", "--ny", "5"]), 0);
    let csv = fs::read_to_string(d.join("grid.csv")).unwrap();
    assert_eq!(csv.lines().count(), 7 * 5 + 1);
    let ppm = fs::read(d.join("heatmap.ppm")).unwrap();
    assert!(ppm.starts_with(b"P6\n7 5\n255\n"));
    assert_eq!(ppm.len(), b"P6\n7 5\n255\n".len() + 7 * 5 * 3);
    let sidecar: Value = serde_json::from_slice(&fs::read(d.join("grid.json")).unwrap()).unwrap();
    assert_eq!(sidecar["model_tag"], "idw");
    assert_eq!(sidecar["days"].as_array().unwrap().len(), 5);
}

#[test]
fn constant_panel_maps_white_and_forecasts_flat() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = write(d, "const.json", CONSTANT);
    assert_eq!(irmap(d, &["synth", "--config", &cfg]), 0);
    assert_eq!(irmap(d, &["fit", "--config", &cfg, "--panel", "panel.csv"]), 0);
    assert_eq!(irmap(d, &["map", "--model", "model.json", "--nx", "4", "--ny", "4"]), 0);
    let ppm = fs::read(d.join("heatmap.ppm")).unwrap();
    assert!(ppm[b"P6\n4 4\n255\n".len()..].iter().all(|&b| b == 255));
    assert_eq!(irmap(d, &["forecast", "--model", "model.json", "--horizon", "31"]), 0);
    let text = fs::read_to_string(d.join("forecast.csv")).unwrap();
    for line in text.lines().skip(1) {
        let forecast: f64 = line.split(',').nth(3).unwrap().parse().unwrap();
        assert!((forecast - 2.0).abs() < 0.01);
    }
}

#[test]
fn walk_forward_rows() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(irmap(d, &["synth", "--days", "120", "--seed", "2"]), 0);
    let args = ["forecast", "--panel", "panel.csv", "--walk-forward", "60", "30", "--horizon", "30"];
    assert_eq!(irmap(d, &args), 0);
    let text = fs::read_to_string(d.join("walk_forward.csv")).unwrap();
    assert_eq!(text.lines().count(), 1 + 2);
    let short = ["forecast", "--panel", "panel.csv", "--walk-forward", "100", "30", "--horizon", "30"];
    assert_eq!(irmap(d, &short), 3);
}

#[test]
fn reconstruct_interpolator_reproduces_curve() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(irmap(d, &["synth", "--days", "30"]), 0);
    let cfg = write(d, "all.json", r#"{"model":{"family":"idw"}}"#);
    assert_eq!(irmap(d, &["fit", "--config", &cfg, "--panel", "panel.csv"]), 0);
    assert_eq!(irmap(d, &["reconstruct", "--model", "model.json", "--date", "2004-01-20", "--panel", "panel.csv"]), 0);
    let text = fs::read_to_string(d.join("curve.csv")).unwrap();
    assert_eq!(text.lines().count(), 14);
    assert_eq!(irmap(d, &["reconstruct", "--model", "model.json", "--date", "2005-01-20"]), 2);
}

fn report(d: &Path) -> Value {
    serde_json::from_slice(&fs::read(d.join("residual_report.json")).unwrap()).unwrap()
}

#[test]
fn diagnose_verdicts() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(irmap(d, &["synth", "--days", "40"]), 0);
    assert_eq!(irmap(d, &["fit", "--panel", "panel.csv", "--model", "idw"]), 0);
    assert_eq!(irmap(d, &["diagnose", "--model", "model.json", "--panel", "panel.csv"]), 0);
    let r = report(d);
    assert_eq!(r["verdict"], "pure_nugget");
    assert_eq!(r["nugget_ratio"], 1.0);
    assert!(r["residuals"].as_array().unwrap().iter().all(|s| s["value"] == 0.0));
    for key in ["residual_variance", "threshold", "best_fit", "smallest_lag", "empirical"] {
        assert!(r.get(key).is_some(), "missing {key}");
    }
    let facts: Value = serde_json::from_slice(&fs::read(d.join("stylized_facts.json")).unwrap()).unwrap();
    assert_eq!(facts["n_dates"], 40);
    assert!(facts["inversions"].is_u64());
    let corr = fs::read_to_string(d.join("correlation.csv")).unwrap();
    assert_eq!(corr.lines().count(), 14);

    // Underfit: every prediction comes from a single far-away point.
    let mut model: Value = serde_json::from_slice(&fs::read(d.join("model.json")).unwrap()).unwrap();
    model["model"]["model"]["config"]["neighbors"] = serde_json::json!({"nearest": 1});
    model["model"]["model"]["training"] = serde_json::json!([{"point": {"u": 10.0, "v": 10.0}, "value": 0.0}]);
    fs::write(d.join("underfit.json"), serde_json::to_vec(&model).unwrap()).unwrap();
    assert_eq!(irmap(d, &["diagnose", "--model", "underfit.json", "--panel", "panel.csv"]), 0);
    assert_eq!(report(d)["verdict"], "structured");

    // A different panel does not match the model's scaling.
    let other = tempfile::tempdir().unwrap();
    assert_eq!(irmap(other.path(), &["synth", "--days", "45"]), 0);
    let other_panel = other.path().join("panel.csv");
    assert_eq!(irmap(d, &["diagnose", "--model", "model.json", "--panel", other_panel.to_str().unwrap()]), 3);
}

#[test]
fn refuses_to_overwrite_input() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(irmap(d, &["synth", "--days", "30"]), 0);
    fs::copy(d.join("panel.csv"), d.join("model.json")).unwrap();
    assert_eq!(irmap(d, &["fit", "--panel", "model.json"]), 2);
}

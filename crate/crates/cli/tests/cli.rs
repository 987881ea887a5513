use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use isogrid_core::lpsolve::read_lp;

fn isogrid(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_isogrid")).args(args).env("RUST_LOG", "warn").output().expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A configuration small enough to run every stage in seconds.
fn tiny_config(dir: &Path, out: &Path) -> std::path::PathBuf {
    let cfg = serde_json::json!({
        "out": out,
        "synth": { "days": 40 },
        "tuner": { "budget": 1, "strategy": "random" },
        "tune_hours": 1,
        "search_space": {
            "hidden_width": [8], "depth": [1], "batch": [16], "buffer_capacity": [2000]
        },
        "train": { "episodes": 1 },
        "schedule_days": 1,
        "coverage_draws": 200
    });
    let path = dir.join("tiny.json");
    fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

#[test]
fn missing_input_is_a_user_error_and_creates_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, serde_json::json!({ "input": dir.path().join("absent.csv"), "out": out }).to_string()).unwrap();
    let o = isogrid(&["pipeline", "--config", s(&cfg)]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(!out.exists());
}

#[test]
fn unknown_config_key_is_a_user_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"alphass": [0.9]}"#).unwrap();
    let o = isogrid(&["generate", "--config", s(&cfg), "--out", s(&dir.path().join("r"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("alphass"));
}

#[test]
fn generate_five_years_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = isogrid(&["generate", "--days", "1825", "--seed", "7", "--out", s(out)]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let text = fs::read_to_string(a.join("data.csv")).unwrap();
    assert_eq!(text.lines().count() - 1, 5 * 365 * 24);
    assert_eq!(text, fs::read_to_string(b.join("data.csv")).unwrap());
    assert!(a.join("manifest.json").is_file());
}

#[test]
fn three_day_horizon_fails_training_with_a_clear_message() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    assert!(isogrid(&["generate", "--days", "3", "--out", s(&out)]).status.success());
    let o = isogrid(&["train", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("at least 8 complete days"), "{err}");
}

#[test]
fn stage_without_its_inputs_names_the_missing_stage() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = isogrid(&["fit-errors", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("run `train` first"));
}

#[test]
fn pipeline_then_export_lp() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let cfg = tiny_config(dir.path(), &out);
    let o = isogrid(&["pipeline", "--config", s(&cfg), "--workers", "2"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["report.json", "costs.csv", "forecasts.csv", "error_models.json", "sequences.json", "tuning.json", "manifest.json"] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["costs"].as_array().unwrap().len(), 3);

    let o = isogrid(&["export-lp", "--config", s(&cfg)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let mut files: Vec<_> = fs::read_dir(out.join("lp")).unwrap().map(|e| e.unwrap().path()).collect();
    files.sort();
    assert_eq!(files.len(), 6);
    let first: Vec<Vec<u8>> = files.iter().map(|f| fs::read(f).unwrap()).collect();
    for f in &files {
        let model = read_lp(f).unwrap();
        let w_columns = model.columns.iter().filter(|c| c.name.starts_with("W_")).count();
        if f.to_str().unwrap().ends_with("_quantile.lp") {
            assert_eq!(w_columns, 0, "{}", f.display());
        } else {
            assert!(w_columns > 0, "{}", f.display());
        }
    }

    assert!(isogrid(&["export-lp", "--config", s(&cfg)]).status.success());
    let again: Vec<Vec<u8>> = files.iter().map(|f| fs::read(f).unwrap()).collect();
    assert_eq!(first, again);

    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 7);
    assert!(manifest["stages"]["export-lp"]["files"].as_object().unwrap().len() == 6);
    assert_eq!(manifest["config_sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn pipeline_reruns_reproduce_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let cfg = tiny_config(dir.path(), &a);
    for (out, workers) in [(&a, "1"), (&b, "3")] {
        let o = isogrid(&["pipeline", "--config", s(&cfg), "--out", s(out), "--workers", workers]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["data.csv", "forecasts.csv", "error_models.json", "sequences.json", "costs.csv", "calibration.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f} differs");
    }
}

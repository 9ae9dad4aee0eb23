use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_phasenoise")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, name: &str, cfg: &Value) -> String {
    let path = dir.join(name);
    fs::write(&path, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    path.to_str().unwrap().to_owned()
}

fn base_config() -> Value {
    json!({
        "schema_version": 1,
        "model": "A",
        "n_t": 2,
        "n_r": 2,
        "input": { "kind": "single_antenna_amplitude", "antenna": 0 },
        "snr_db": [20.0, 30.0, 40.0],
        "estimator": { "n_samples": 2000, "n_likelihood": 200 },
        "alpha_grid": [0.2],
        "seed": 11
    })
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn simulate_writes_requested_rows_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = base_config();
    cfg["estimator"]["n_samples"] = json!(100);
    cfg["snr_db"] = json!([10.0]);
    let path = write_config(dir.path(), "c.json", &cfg);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = run(&["--config", &path, "--out", out.to_str().unwrap(), "simulate"]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let file = "samples_00_10dB.csv";
    let text = fs::read_to_string(a.join(file)).unwrap();
    assert_eq!(text.lines().count(), 101);
    assert_eq!(text, fs::read_to_string(b.join(file)).unwrap());
    assert_eq!(fs::read(a.join("channel.csv")).unwrap(), fs::read(b.join("channel.csv")).unwrap());
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = base_config();
    cfg["estimator"]["n_samples"] = json!(100);
    cfg["snr_db"] = json!([10.0]);
    let path = write_config(dir.path(), "c.json", &cfg);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(run(&["--config", &path, "--out", a.to_str().unwrap(), "simulate"]).status.success());
    assert!(run(&["--config", &path, "--seed", "12", "--out", b.to_str().unwrap(), "simulate"]).status.success());
    let file = "samples_00_10dB.csv";
    assert_ne!(fs::read(a.join(file)).unwrap(), fs::read(b.join(file)).unwrap());
}

#[test]
fn invalid_model_lists_allowed_values() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = base_config();
    cfg["model"] = json!("C");
    let path = write_config(dir.path(), "c.json", &cfg);
    let o = run(&["--config", &path, "--out", dir.path().to_str().unwrap(), "simulate"]);
    assert!(!o.status.success());
    let err = stderr(&o);
    for m in ["A", "B1", "B2", "B3", "common"] {
        assert!(err.contains(&format!("`{m}`")), "{err}");
    }
}

#[test]
fn empty_snr_grid_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = base_config();
    cfg["snr_db"] = json!([]);
    let path = write_config(dir.path(), "c.json", &cfg);
    let o = run(&["--config", &path, "--out", dir.path().to_str().unwrap(), "sweep"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("snr_db must not be empty"), "{}", stderr(&o));
}

#[test]
fn decreasing_snr_grid_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = base_config();
    cfg["snr_db"] = json!([20.0, 10.0, 30.0]);
    let path = write_config(dir.path(), "c.json", &cfg);
    let o = run(&["--config", &path, "--out", dir.path().to_str().unwrap(), "sweep"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("strictly increasing"));
}

#[test]
fn missing_seed_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = base_config();
    cfg.as_object_mut().unwrap().remove("seed");
    let path = write_config(dir.path(), "c.json", &cfg);
    let o = run(&["--config", &path, "--out", dir.path().to_str().unwrap(), "sweep"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("seed"));
}

#[test]
fn sweep_summary_has_fit_and_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(dir.path(), "c.json", &base_config());
    let out = dir.path().join("o");
    let o = run(&["--config", &path, "--out", out.to_str().unwrap(), "sweep"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(out.join("summary.json")).unwrap();
    let summary: Value = serde_json::from_str(&text).unwrap();
    for key in ["slope", "intercept", "r2", "window"] {
        assert!(summary["prelog_fit"].get(key).is_some(), "{key}");
    }
    assert_eq!(summary["rows"].as_array().unwrap().len(), 3);
    assert_eq!(summary["config_hash"].as_str().unwrap().len(), 64);

    let csv = fs::read_to_string(out.join("bounds.csv")).unwrap();
    assert!(csv.starts_with("model,n_t,n_r,P,alpha_vec,duality_term,cond_term,mi_lower,mi_upper,se_"));
    assert_eq!(csv.lines().count(), 4);

    // The summary is itself a valid config and reproduces the same run.
    let again = dir.path().join("again");
    let o = run(&["--config", out.join("summary.json").to_str().unwrap(), "--out", again.to_str().unwrap(), "sweep"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let second: Value = serde_json::from_str(&fs::read_to_string(again.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["config"], second["config"]);
    assert_eq!(summary["config_hash"], second["config_hash"]);
    assert_eq!(text, fs::read_to_string(again.join("summary.json")).unwrap());
}

#[test]
fn sweep_without_duality_reports_lower_bound_only() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = base_config();
    cfg["model"] = json!("B2");
    cfg["input"] = json!({ "kind": "gaussian" });
    let path = write_config(dir.path(), "c.json", &cfg);
    let out = dir.path().join("o");
    let o = run(&["--config", &path, "--out", out.to_str().unwrap(), "--threads", "1", "sweep"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let summary: Value = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    let row = &summary["rows"][0];
    assert!(row["mi_lower"].is_number());
    assert!(row["mi_upper"].is_null());
}

#[test]
fn duality_for_unsupported_model_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = base_config();
    cfg["model"] = json!("B3");
    cfg["duality"] = json!(true);
    let path = write_config(dir.path(), "c.json", &cfg);
    let o = run(&["--config", &path, "--out", dir.path().to_str().unwrap(), "sweep"]);
    assert!(!o.status.success());
}

#[test]
fn constellation_file_input() {
    let dir = tempfile::tempdir().unwrap();
    let points = dir.path().join("qpsk.csv");
    fs::write(&points, "# re0,im0,re1,im1\n1,1,0,0\n-1,1,0,0\n1,-1,0,0\n-1,-1,0,0\n").unwrap();
    let mut cfg = base_config();
    cfg["input"] = json!({ "kind": "file", "path": points });
    cfg["estimator"]["n_samples"] = json!(200);
    let path = write_config(dir.path(), "c.json", &cfg);
    let out = dir.path().join("o");
    let o = run(&["--config", &path, "--out", out.to_str().unwrap(), "simulate"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(out.join("samples_00_20dB.csv")).unwrap();
    let row: Vec<f64> = text.lines().nth(1).unwrap().split(',').map(|v| v.parse().unwrap()).collect();
    assert_eq!((row[3], row[4]), (0.0, 0.0));
}

#[test]
fn predict_prints_expected_values() {
    let o = run(&["predict", "--model", "B1", "--nt", "4", "--nr", "5"]);
    assert!(o.status.success());
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("lower 1.5, upper 2, tight false"), "{text}");
    let o = run(&["predict", "--model", "common", "--nt", "2", "--nr", "2"]);
    assert!(String::from_utf8_lossy(&o.stdout).contains("lower 1.5, upper 1.5, tight true"));
    let o = run(&["predict", "--model", "X", "--nt", "2", "--nr", "2"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("allowed values: A, B1, B2, B3, common"));
}

fn recover_config(n_t: usize, n_r: usize, trials: usize) -> Value {
    json!({
        "schema_version": 1,
        "model": "A",
        "n_t": n_t,
        "n_r": n_r,
        "recovery": { "trials": trials, "max_starts": 50 },
        "seed": 3
    })
}

#[test]
fn recover_with_no_trials_writes_header_only() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(dir.path(), "c.json", &recover_config(2, 3, 0));
    let o = run(&["--config", &path, "--out", dir.path().to_str().unwrap(), "recover"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(dir.path().join("recovery.csv")).unwrap();
    assert_eq!(text.trim(), "n_t,n_r,trial,status,residual,amp_rel_err");
}

#[test]
fn recover_below_threshold_is_ambiguous() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(dir.path(), "c.json", &recover_config(2, 2, 100));
    let o = run(&["--config", &path, "--out", dir.path().to_str().unwrap(), "recover"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(dir.path().join("recovery_summary.csv")).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let values: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = |name: &str| values[header.iter().position(|h| *h == name).unwrap()].parse::<f64>().unwrap();
    assert!(col("ambiguity_rate") >= 0.8, "{text}");
    assert_eq!(col("trials"), 100.0);
    let trials = fs::read_to_string(dir.path().join("recovery.csv")).unwrap();
    assert_eq!(trials.lines().count(), 101);
}

#[test]
fn selftest_passes() {
    let o = run(&["selftest"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
    assert!(!String::from_utf8_lossy(&o.stdout).contains("FAIL"));
}

#[test]
fn missing_config_is_an_error() {
    let o = run(&["sweep"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("--config"));
}

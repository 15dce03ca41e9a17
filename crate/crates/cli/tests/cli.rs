use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn hybridq(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hybridq"))
        .args(args)
        .env_remove("HYBRIDQ_CONFIG")
        .env("HYBRIDQ_WORKERS", "1")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = hybridq(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn envelope(path: &Path, kind: &str) -> Value {
    let v: Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    assert_eq!(v["format"], "hybridq-result");
    assert_eq!(v["version"], 1);
    assert_eq!(v["kind"], kind);
    v["data"].clone()
}

fn simulated(dir: &Path, n: usize) -> String {
    let path = dir.join("returns.csv");
    let p = path.to_str().unwrap().to_string();
    ok(&["simulate", "--n", &n.to_string(), "--seed", "9", "--out", &p]);
    p
}

#[test]
fn simulate_fit_forecast() {
    let dir = tempfile::tempdir().unwrap();
    let sim_json = dir.path().join("sim.json");
    let input = dir.path().join("returns.csv");
    ok(&[
        "simulate", "--alpha0", "0.1", "--alpha", "0.15", "--beta", "0.8", "--innovation", "t", "--n", "600", "--out",
        input.to_str().unwrap(), "--result", sim_json.to_str().unwrap(),
    ]);
    let sim = envelope(&sim_json, "simulation");
    assert_eq!(sim["returns"].as_array().unwrap().len(), 600);
    assert_eq!(std::fs::read_to_string(&input).unwrap().lines().count(), 601);

    let fit = dir.path().join("fit.json");
    ok(&["fit", "--input", input.to_str().unwrap(), "--orders", "1,1", "--tau", "0.05", "--out", fit.to_str().unwrap()]);
    let f = envelope(&fit, "fit");
    assert_eq!(f["theta_tilde"].as_array().unwrap().len(), 3);
    assert_eq!(f["qacf"].as_array().unwrap().len(), 6);
    assert!(f["next_q"].as_f64().unwrap() < 0.0);

    let fc = dir.path().join("fc.json");
    let stdout = ok(&[
        "forecast", "--input", input.to_str().unwrap(), "--method", "riskm", "--tau", "0.01", "--out", fc.to_str().unwrap(),
    ]);
    assert!(stdout.contains("RiskM"));
    let v = envelope(&fc, "forecast");
    assert_eq!(v["method"], "risk-metrics");
    assert!(v["ci"].is_null());
}

#[test]
fn diagnose_and_bootstrap_write_plot_data() {
    let dir = tempfile::tempdir().unwrap();
    let input = simulated(dir.path(), 500);
    let out = dir.path().join("diag.json");
    let plot = dir.path().join("qacf.tsv");
    ok(&[
        "diagnose", "--input", &input, "--lags", "4", "--B", "120", "--weights", "exponential", "--tau", "0.1", "--out",
        out.to_str().unwrap(), "--plot", plot.to_str().unwrap(), "--delimiter", "tab",
    ]);
    let d = envelope(&out, "diagnose");
    let p = d["p_value"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&p));
    let text = std::fs::read_to_string(&plot).unwrap();
    assert_eq!(text.lines().next().unwrap(), "lag\tr\tlower\tupper");
    assert_eq!(text.lines().count(), 5);

    let boot = dir.path().join("boot.json");
    ok(&["bootstrap", "--input", &input, "--B", "80", "--weights", "w3", "--replicates", "--out", boot.to_str().unwrap()]);
    let b = envelope(&boot, "bootstrap");
    assert_eq!(b["ensemble"]["replicates"].as_array().unwrap().len(), 80);
    let (lo, hi) = (b["next_q_ci"][0].as_f64().unwrap(), b["next_q_ci"][1].as_f64().unwrap());
    assert!(lo <= hi);
}

#[test]
fn backtest_reads_config_and_reports_ecr() {
    let dir = tempfile::tempdir().unwrap();
    let prices = dir.path().join("prices.csv");
    let mut text = String::from("date,close\n");
    let mut p = 100.0f64;
    for i in 0..120 {
        p *= 1.0 + 0.01 * ((i * 37 % 11) as f64 - 5.0) / 5.0;
        text.push_str(&format!("{}-{:02}-{:02},{p}\n", 2009 + i / 60, 1 + (i / 5) % 12, 1 + i % 5));
    }
    std::fs::write(&prices, text).unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "# backtest settings\nmethod = riskm\ntau = 0.05\n").unwrap();
    let out = dir.path().join("bt.json");
    let plot = dir.path().join("bt.csv");
    let stdout = ok(&[
        "--config", cfg.to_str().unwrap(), "backtest", "--input", prices.to_str().unwrap(), "--start-date", "2010-01-01",
        "--subperiod", "all:2010-01-01:2010-12-31", "--out", out.to_str().unwrap(), "--plot", plot.to_str().unwrap(),
    ]);
    assert!(stdout.contains("ECR"));
    let r = envelope(&out, "backtest");
    let forecasts = r["forecasts"].as_array().unwrap().len();
    let violations = r["violations"].as_array().unwrap().len();
    assert_eq!(forecasts, 60);
    assert_eq!(r["ecr"].as_f64().unwrap(), violations as f64 / forecasts as f64);
    assert_eq!(r["spec"]["method"], "risk-metrics");
    assert_eq!(std::fs::read_to_string(&plot).unwrap().lines().count(), 61);
}

#[test]
fn montecarlo_preset_smoke() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("mc.json");
    let tables = dir.path().join("tables");
    let stdout = ok(&[
        "montecarlo", "--preset", "table4", "--scale", "0.02", "--B", "30", "--sizes", "300", "--out", out.to_str().unwrap(),
        "--tables", tables.to_str().unwrap(),
    ]);
    assert!(stdout.starts_with("# table4"));
    let v = envelope(&out, "monte-carlo");
    assert_eq!(v["preset"], "table4");
    assert!(tables.join("table4_0.csv").exists());
}

#[test]
fn exit_codes() {
    let out = hybridq(&["fit", "--bogus"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--bogus"));

    assert_eq!(hybridq(&["--help"]).status.code(), Some(0));

    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.csv");
    let out = hybridq(&["fit", "--input", missing.to_str().unwrap(), "--out", "x.json"]);
    assert_eq!(out.status.code(), Some(1));

    // A constant series has no volatility to estimate.
    let flat = dir.path().join("flat.csv");
    std::fs::write(&flat, "return\n".to_string() + &"0\n".repeat(200)).unwrap();
    let res = dir.path().join("flat.json");
    let out = hybridq(&["fit", "--input", flat.to_str().unwrap(), "--out", res.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_rangecert"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).arg("--quiet").output().expect("binary runs")
}

fn write_config(dir: &Path, json: &str) -> String {
    let p = dir.join("config.json");
    std::fs::write(&p, json).unwrap();
    p.to_str().unwrap().to_owned()
}

fn read(p: impl AsRef<Path>) -> String {
    std::fs::read_to_string(p).unwrap()
}

fn report(dir: &Path) -> Value {
    serde_json::from_str(&read(dir.join("report.json"))).unwrap()
}

#[test]
fn simulate_default_shape() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("d");
    let o = run(&["simulate", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let meas = read(out.join("measurements.csv"));
    let rows: Vec<&str> = meas.lines().skip(1).collect();
    assert_eq!(rows.len(), 600);
    let mut times: Vec<&str> = rows.iter().map(|r| r.split(',').next().unwrap()).collect();
    times.dedup();
    assert_eq!(times.len(), 100);
    assert_eq!(read(out.join("anchors.csv")).lines().count(), 7);
    assert_eq!(read(out.join("ground_truth.csv")).lines().count(), 101);
    let resolved: Value = serde_json::from_str(&read(out.join("config.json"))).unwrap();
    assert_eq!(resolved["sim"]["num_times"], 100);
}

#[test]
fn simulate_round_robin_one_reading_per_time() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"sim": {"schedule": "round-robin-one"}}"#);
    let out = dir.path().join("d");
    assert!(run(&["simulate", "--config", &cfg, "--out", out.to_str().unwrap()]).status.success());
    assert_eq!(read(out.join("measurements.csv")).lines().count(), 101);
}

#[test]
fn simulate_is_deterministic_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let sim = |name: &str, seed: &str| {
        let out = dir.path().join(name);
        assert!(run(&["simulate", "--seed", seed, "--out", out.to_str().unwrap()]).status.success());
        out
    };
    let (a, b, c) = (sim("a", "5"), sim("b", "5"), sim("c", "6"));
    for f in ["anchors.csv", "measurements.csv", "ground_truth.csv", "config.json"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    assert_ne!(read(a.join("measurements.csv")), read(c.join("measurements.csv")));
}

#[test]
fn solve_noiseless_certifies_one_cluster() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"sim": {"sigma_d": 0.0, "sigma_a": 0.0}, "noise": {"sigma": 0.001}}"#);
    let data = dir.path().join("d");
    let out = dir.path().join("s");
    assert!(run(&["simulate", "--config", &cfg, "--out", data.to_str().unwrap()]).status.success());
    let o = run(&["solve", "--config", &cfg, "--data", data.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let r = report(&out);
    let restarts = r["restarts"].as_array().unwrap();
    assert_eq!(restarts.len(), 10);
    for rs in restarts {
        assert_eq!(rs["verdict"], "certified");
        assert_eq!(rs["label"], "best-cost");
        assert!(rs["rmse"].as_f64().unwrap() < 1e-6);
    }
    assert_eq!(r["selected_certified"], true);
    assert!(out.join("estimate.csv").exists());
    let est = read(out.join("estimate.csv"));
    assert!(est.starts_with("t,x,y,vx,vy\n"));
    assert_eq!(est.lines().count(), 101);
}

#[test]
fn solve_separates_local_minima() {
    // near-colinear anchors: mirrored local minima must stay uncertified
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"sim": {"placement": {"kind": "near-colinear", "epsilon": 0.01}, "rng_seed": 601}}"#);
    let out = dir.path().join("s");
    let o = run(&["solve", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(matches!(o.status.code(), Some(0) | Some(2)));
    let r = report(&out);
    let restarts = r["restarts"].as_array().unwrap();
    let best = restarts[0]["cost"].as_f64().unwrap();
    let mut suboptimal = 0;
    for rs in restarts {
        if rs["cost"].as_f64().unwrap() > best * (1.0 + 1e-4) {
            suboptimal += 1;
            assert_ne!(rs["verdict"], "certified", "{rs}");
        }
    }
    assert!(suboptimal > 0, "seed no longer produces local minima");
    let rows = read(out.join("restarts.csv"));
    assert_eq!(rows.lines().count(), restarts.len() + 1);
}

#[test]
fn uncertified_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"solve": {"n_restarts": 2}, "certify": {"stationarity_threshold": 1e-300}}"#);
    let out = dir.path().join("s");
    let o = bin()
        .args(["solve", "--config", &cfg, "--out", out.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("no estimate was certified"));
    let r = report(&out);
    assert_eq!(r["selected_certified"], false);
    assert!(r["warnings"].as_array().unwrap().len() == 1);
    assert!(out.join("estimate.csv").exists());
}

#[test]
fn rank_deficiency_is_an_error_with_hint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"sim": {"schedule": "round-robin-one"}, "prior": {"kind": "none"}}"#);
    let o = run(&["solve", "--config", &cfg, "--out", dir.path().join("s").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("add a motion prior"), "{err}");
}

#[test]
fn bad_config_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"sim": {"num_times": "many"}}"#);
    let o = run(&["simulate", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("invalid config"));
}

#[test]
fn report_hash_tracks_input() {
    let dir = tempfile::tempdir().unwrap();
    let solve = |name: &str, seed: &str| {
        let out = dir.path().join(name);
        run(&["solve", "--seed", seed, "--out", out.to_str().unwrap()]);
        report(&out)
    };
    let (a, b, c) = (solve("a", "3"), solve("b", "3"), solve("c", "4"));
    assert_eq!(a["input_hash"], b["input_hash"]);
    assert_ne!(a["input_hash"], c["input_hash"]);
    assert_eq!(a["config"]["sim"]["rng_seed"], 3);
    assert_eq!(a["restarts"], b["restarts"]);
}

fn write_truth(dir: &Path, rows: &[(f64, f64, f64)]) -> String {
    let p = dir.join("truth.csv");
    let mut s = String::from("t,x,y\n");
    for (t, x, y) in rows {
        s += &format!("{t},{x},{y}\n");
    }
    std::fs::write(&p, s).unwrap();
    p.to_str().unwrap().to_owned()
}

fn write_est(dir: &Path, rows: &[(f64, f64, f64)]) -> String {
    let p = dir.join("est.csv");
    let mut s = String::from("t,x,y,vx,vy\n");
    for (t, x, y) in rows {
        s += &format!("{t},{x},{y},0,0\n");
    }
    std::fs::write(&p, s).unwrap();
    p.to_str().unwrap().to_owned()
}

fn eval(est: &str, truth: &str) -> Value {
    let o = run(&["eval", "--estimate", est, "--ground-truth", truth]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    serde_json::from_slice(&o.stdout).unwrap()
}

#[test]
fn eval_constant_offset() {
    let dir = tempfile::tempdir().unwrap();
    let truth: Vec<_> = (0..10).map(|i| (i as f64 * 0.1, i as f64, (i * i) as f64)).collect();
    let est: Vec<_> = truth.iter().map(|&(t, x, y)| (t, x + 0.3, y - 0.4)).collect();
    let m = eval(&write_est(dir.path(), &est), &write_truth(dir.path(), &truth));
    assert!((m["rmse"].as_f64().unwrap() - 0.5).abs() < 1e-12);
    assert!((m["mae"].as_f64().unwrap() - 0.5).abs() < 1e-12);
    let m = eval(&write_est(dir.path(), &truth), &write_truth(dir.path(), &truth));
    assert_eq!((m["rmse"].as_f64(), m["mae"].as_f64()), (Some(0.0), Some(0.0)));
}

#[test]
fn eval_matches_direct_formula() {
    let dir = tempfile::tempdir().unwrap();
    // deterministic pseudo-random perturbations
    let mut state = 12345u64;
    let mut next = || {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
    };
    let truth: Vec<_> = (0..50).map(|i| (i as f64 * 0.02, next() * 10.0, next() * 10.0)).collect();
    let est: Vec<_> = truth.iter().map(|&(t, x, y)| (t, x + next(), y + next())).collect();
    let errs: Vec<f64> = truth.iter().zip(&est).map(|(a, b)| ((a.1 - b.1).powi(2) + (a.2 - b.2).powi(2)).sqrt()).collect();
    let rmse = (errs.iter().map(|e| e * e).sum::<f64>() / 50.0).sqrt();
    let mae = errs.iter().sum::<f64>() / 50.0;
    let m = eval(&write_est(dir.path(), &est), &write_truth(dir.path(), &truth));
    assert!((m["rmse"].as_f64().unwrap() - rmse).abs() < 1e-12);
    assert!((m["mae"].as_f64().unwrap() - mae).abs() < 1e-12);
}

#[test]
fn eval_reports_misaligned_times() {
    let dir = tempfile::tempdir().unwrap();
    let truth = [(0.0, 0.0, 0.0), (1.0, 1.0, 1.0)];
    let est = [(0.0, 0.0, 0.0), (0.75, 1.0, 1.0)];
    let o = run(&["eval", "--estimate", &write_est(dir.path(), &est), "--ground-truth", &write_truth(dir.path(), &truth)]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("t=0.75") && err.contains("do not align"), "{err}");
}

#[test]
fn bench_two_sizes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"bench": {"sizes": [1000, 10000]}, "noise": {"policy": "propagated"}}"#);
    let out = dir.path().join("b");
    assert!(run(&["bench", "--config", &cfg, "--out", out.to_str().unwrap()]).status.success());
    let table = read(out.join("bench.csv"));
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[0].starts_with("n,measurements,gn_iterations,gn_seconds_per_iteration,duals_seconds"));
    assert!(lines[1].starts_with("1000,6000,") && lines[2].starts_with("10000,60000,"));
    assert!(lines[1].ends_with(",1000,certified") && lines[2].ends_with(",10000,certified"), "{table}");
}

#[test]
fn sweep_writes_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"sweep": {"setups": 2, "noise_levels": [0.001, 0.01]}, "solve": {"n_restarts": 3}}"#);
    let out = dir.path().join("w");
    assert!(run(&["sweep", "--config", &cfg, "--out", out.to_str().unwrap()]).status.success());
    let rows = read(out.join("sweep.csv"));
    assert_eq!(rows.lines().count(), 1 + 2 * 2 * 3);
    assert!(rows.starts_with("noise,setup,restart,rmse,cost,iterations,converged,certified,verdict,label\n"));
    let summary = read(out.join("sweep_summary.csv"));
    let lines: Vec<&str> = summary.lines().collect();
    assert_eq!(lines.len(), 3);
    for l in &lines[1..] {
        let f: Vec<usize> = l.split(',').skip(2).map(|v| v.parse().unwrap()).collect();
        assert_eq!(f.iter().sum::<usize>(), 6);
        assert_eq!(f[2], 0, "false positive in {l}");
    }
}

#[test]
fn template_parses() {
    let o = run(&["template"]);
    assert!(o.status.success());
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["sim"]["num_times"], 100);
}

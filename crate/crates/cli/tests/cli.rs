mod common;

use std::fs;
use std::path::{Path, PathBuf};

use bpcc_core::coding::RowMatrix;
use bpcc_core::model::sample_task_durations;
use common::{addresses, read_csv, run, stdout_json, WorkerProcess};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use serde_json::{json, Value};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn write_json(dir: &Path, name: &str, v: &Value) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, serde_json::to_string_pretty(v).unwrap()).unwrap();
    path
}

fn homogeneous(n: usize, p: u32) -> Value {
    let workers: Vec<Value> = (0..n).map(|_| json!({"mu": 1.0, "alpha": 1.0, "p": p})).collect();
    json!({"r": 10000, "workers": workers})
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn u64s(v: &Value) -> Vec<u64> {
    v.as_array().unwrap().iter().map(|x| x.as_u64().unwrap()).collect()
}

fn f64s(v: &Value) -> Vec<f64> {
    v.as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect()
}

/// Compares `actual` with the checked-in golden file, rewriting it instead
/// when `BPCC_BLESS` is set.
fn assert_golden(actual: &Path, golden: &str) {
    let golden = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(golden);
    let text = fs::read_to_string(actual).unwrap();
    if std::env::var_os("BPCC_BLESS").is_some() {
        fs::write(&golden, &text).unwrap();
        return;
    }
    let expected = fs::read_to_string(&golden).unwrap_or_else(|_| panic!("missing golden file {}", golden.display()));
    assert_eq!(text, expected, "{} differs from {}", actual.display(), golden.display());
}

#[test]
fn uniform_allocation_splits_evenly() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = homogeneous(10, 1);
    v["scheme"] = json!("uniform");
    let out = run(&["allocate", s(&write_json(dir.path(), "s.json", &v))]);
    let report = stdout_json(&out);
    assert_eq!(u64s(&report["loads"]), vec![1000; 10]);
    let table = String::from_utf8(out.stderr).unwrap();
    assert!(table.starts_with("worker"), "{table}");
    assert_eq!(table.lines().count(), 12);
}

#[test]
fn bpcc_homogeneous_loads_are_equal_and_match_hcmm_at_one_batch() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = homogeneous(10, 5);
    let bpcc = stdout_json(&run(&["allocate", s(&write_json(dir.path(), "b.json", &v))]));
    let loads = u64s(&bpcc["loads"]);
    assert!(loads.iter().all(|&l| l == loads[0]), "{loads:?}");

    let workers: Vec<Value> = [(1.0, 0.5), (3.0, 0.2), (0.5, 2.0), (7.0, 0.05)]
        .iter()
        .map(|&(mu, alpha)| json!({"mu": mu, "alpha": alpha, "p": 1}))
        .collect();
    v = json!({"r": 5000, "workers": workers, "scheme": "bpcc"});
    let bpcc = stdout_json(&run(&["allocate", s(&write_json(dir.path(), "b1.json", &v))]));
    v["scheme"] = json!("hcmm");
    let hcmm = stdout_json(&run(&["allocate", s(&write_json(dir.path(), "h1.json", &v))]));
    assert_eq!(u64s(&bpcc["loads"]), u64s(&hcmm["loads"]));
}

#[test]
fn bounds_on_homogeneous_roster() {
    let dir = tempfile::tempdir().unwrap();
    let report = stdout_json(&run(&["bounds", s(&write_json(dir.path(), "s.json", &homogeneous(10, 1)))]));
    let l_hat = f64s(&report["l_hat"]);
    assert!(l_hat.iter().all(|&l| l == l_hat[0]));
    let inf = report["inf_tau"].as_f64().unwrap();
    let sup = report["sup_tau"].as_f64().unwrap();
    let tau = report["tau_star"].as_f64().unwrap();
    assert!(inf < sup);
    assert!((tau - sup).abs() <= 1e-9 * sup, "tau* {tau} vs sup {sup}");

    // more batches pull tau* towards the lower bound
    let deep = stdout_json(&run(&["bounds", s(&write_json(dir.path(), "d.json", &homogeneous(10, 200)))]));
    let tau_deep = deep["tau_star"].as_f64().unwrap();
    assert!(inf <= tau_deep && tau_deep < tau);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write_json(dir.path(), "bad.json", &json!({"r": 10, "workers": [], "extra": true}));
    assert_eq!(run(&["allocate", s(&bad)]).status.code(), Some(2));
    let negative = write_json(dir.path(), "neg.json", &json!({"r": 10, "workers": [{"mu": -1.0, "alpha": 1.0}]}));
    assert_eq!(run(&["bounds", s(&negative)]).status.code(), Some(2));
    let infeasible = write_json(
        dir.path(),
        "inf.json",
        &json!({"r": 2, "workers": [{"mu": 1.0, "alpha": 1.0}, {"mu": 1.0, "alpha": 1.0}, {"mu": 1.0, "alpha": 1.0}]}),
    );
    assert_eq!(run(&["allocate", s(&infeasible)]).status.code(), Some(3));
    assert_eq!(run(&["allocate", s(&dir.path().join("missing.json"))]).status.code(), Some(4));
    let unwritable = dir.path().join("no/such/dir/out.csv");
    assert_eq!(run(&["compare", s(&fixture("small.json")), "--out", s(&unwritable)]).status.code(), Some(4));
    assert_eq!(run(&["sweep-p", s(&fixture("small.json")), "--out", s(&unwritable)]).status.code(), Some(4));
}

#[test]
fn golden_csv_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = fixture("small.json");
    let compare = dir.path().join("compare.csv");
    let trace = dir.path().join("trace.csv");
    stdout_json(&run(&["compare", s(&scenario), "--out", s(&compare), "--trace", s(&trace)]));
    assert_golden(&compare, "compare.csv");
    assert_golden(&trace, "compare_trace.csv");

    let sim = dir.path().join("sim.csv");
    stdout_json(&run(&["simulate", s(&scenario), "--out", s(&sim)]));
    assert_golden(&sim, "simulate_trace.csv");

    let sweep = dir.path().join("sweep.csv");
    let out = run(&["sweep-p", s(&scenario), "--out", s(&sweep), "--p", "1,2,4,8"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_golden(&sweep, "sweep.csv");

    let sens = dir.path().join("sensitivity.csv");
    let out = run(&["sensitivity", s(&scenario), "--out", s(&sens), "--delta", "0.05,0.5"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_golden(&sens, "sensitivity.csv");

    let (header, rows) = read_csv(&sens);
    assert_eq!(header, ["delta", "which", "relative_change"]);
    assert_eq!(rows.len(), 4);
}

#[test]
fn outputs_are_rewritten_not_appended_and_independent_of_threads() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = fixture("small.json");
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    stdout_json(&run(&["compare", s(&scenario), "--out", s(&a)]));
    let first = fs::read_to_string(&a).unwrap();
    stdout_json(&run(&["compare", s(&scenario), "--out", s(&a)]));
    assert_eq!(fs::read_to_string(&a).unwrap(), first);
    stdout_json(&run(&["compare", s(&scenario), "--out", s(&b), "--sequential"]));
    assert_eq!(fs::read_to_string(&b).unwrap(), first);
}

#[test]
fn seed_environment_override() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = fixture("small.json");
    let run_with = |seed: Option<&str>, name: &str| {
        let path = dir.path().join(name);
        let mut cmd = common::bpcc();
        cmd.args(["simulate", s(&scenario), "--out", s(&path)]);
        if let Some(seed) = seed {
            cmd.env("BPCC_SEED", seed);
        }
        let out = cmd.output().unwrap();
        assert!(out.status.success());
        fs::read_to_string(path).unwrap()
    };
    let base = run_with(None, "base.csv");
    assert_eq!(run_with(Some("11"), "same.csv"), base);
    assert_ne!(run_with(Some("12"), "other.csv"), base);
}

/// Completion time of one trial: every worker draws one `Exp(1)` and its
/// `k`-th batch lands at `rows_through_k * (alpha + X / mu)`.
fn oracle_time(loads: &[u64], batches: &[u64], mu: f64, alpha: f64, need: u64, draws: &[f64]) -> f64 {
    let mut arrivals = Vec::new();
    for ((&load, &p), &x) in loads.iter().zip(batches).zip(draws) {
        let b = load.div_ceil(p);
        let mut through = 0;
        while through < load {
            let rows = b.min(load - through);
            through += rows;
            arrivals.push((through as f64 * (alpha + x / mu), rows));
        }
    }
    arrivals.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut got = 0;
    for (t, rows) in arrivals {
        got += rows;
        if got >= need {
            return t;
        }
    }
    f64::INFINITY
}

#[test]
fn compare_on_straggler_free_homogeneous_roster() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = homogeneous(10, 20);
    v["trials"] = json!(400);
    let scenario = write_json(dir.path(), "s.json", &v);
    let compare = dir.path().join("compare.csv");
    let trace = dir.path().join("trace.csv");
    stdout_json(&run(&["compare", s(&scenario), "--out", s(&compare), "--trace", s(&trace)]));
    let (header, rows) = read_csv(&compare);
    assert_eq!(header, ["scheme", "mean_time", "success_rate"]);
    let row = |name: &str| rows.iter().find(|r| r[0] == name).unwrap().clone();
    assert_eq!(row("uniform")[1..], row("load_balanced")[1..]);
    let mean = |name: &str| row(name)[1].parse::<f64>().unwrap();
    assert!(mean("bpcc") <= mean("hcmm"));

    // independent paired estimate of both schemes from their allocations
    let alloc = |scheme: &str| {
        let mut w = v.clone();
        w["scheme"] = json!(scheme);
        stdout_json(&run(&["allocate", s(&write_json(dir.path(), &format!("{scheme}.json"), &w))]))
    };
    let (bpcc, hcmm) = (alloc("bpcc"), alloc("hcmm"));
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let trials = 4000;
    let (mut sum_b, mut sum_h, mut wins) = (0.0, 0.0, 0);
    for _ in 0..trials {
        let draws: Vec<f64> = (0..10).map(|_| rng.sample(Exp1)).collect();
        let tb = oracle_time(&u64s(&bpcc["loads"]), &u64s(&bpcc["batches"]), 1.0, 1.0, 10_000, &draws);
        let th = oracle_time(&u64s(&hcmm["loads"]), &u64s(&hcmm["batches"]), 1.0, 1.0, 10_000, &draws);
        sum_b += tb;
        sum_h += th;
        wins += usize::from(tb <= th);
    }
    let (oracle_b, oracle_h) = (sum_b / trials as f64, sum_h / trials as f64);
    assert!(oracle_b < oracle_h);
    assert!(wins > trials * 9 / 10, "{wins}");
    assert!((mean("bpcc") - oracle_b).abs() / oracle_b < 0.02, "{} vs {oracle_b}", mean("bpcc"));
    assert!((mean("hcmm") - oracle_h).abs() / oracle_h < 0.02, "{} vs {oracle_h}", mean("hcmm"));

    let (header, rows) = read_csv(&trace);
    assert_eq!(header, ["time", "mean_rows", "scheme"]);
    for scheme in ["hcmm", "bpcc"] {
        let last = rows.iter().rfind(|r| r[2] == scheme).unwrap();
        assert!(last[1].parse::<f64>().unwrap() >= 10_000.0, "{scheme}: {last:?}");
    }
}

fn write_samples(path: &Path, rows: &[(u64, f64)]) {
    let mut text = String::from("task_size,duration_seconds\n");
    for (size, d) in rows {
        text += &format!("{size},{d}\n");
    }
    fs::write(path, text).unwrap();
}

#[test]
fn estimate_recovers_parameters() {
    let dir = tempfile::tempdir().unwrap();
    let (mu, alpha) = (100.0, 0.01);

    // noiseless: min alpha r and mean excess r / mu
    let mut rows = Vec::new();
    for size in [100u64, 200, 400] {
        let r = size as f64;
        rows.extend([(size, alpha * r), (size, alpha * r + 2.0 * r / mu)]);
    }
    let path = dir.path().join("exact.csv");
    write_samples(&path, &rows);
    let fit = stdout_json(&run(&["estimate", s(&path)]));
    assert!((fit["mu_hat"].as_f64().unwrap() - mu).abs() < 1e-9 * mu);
    assert!((fit["alpha_hat"].as_f64().unwrap() - alpha).abs() < 1e-12);
    assert_eq!(f64s(&fit["fit_residuals"]["shift"]).len(), 3);
    assert_eq!(f64s(&fit["fit_residuals"]["excess"]).len(), 3);

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let rows: Vec<(u64, f64)> = [100u64, 200, 400]
        .iter()
        .flat_map(|&size| {
            let sample = sample_task_durations(mu, alpha, size, 1000, &mut rng);
            sample.durations.into_iter().map(move |d| (size, d))
        })
        .collect();
    let path = dir.path().join("noisy.csv");
    write_samples(&path, &rows);
    let fit = stdout_json(&run(&["estimate", s(&path)]));
    assert!((fit["mu_hat"].as_f64().unwrap() - mu).abs() / mu < 0.05);
    assert!((fit["alpha_hat"].as_f64().unwrap() - alpha).abs() / alpha < 0.05);

    let single = dir.path().join("single.csv");
    write_samples(&single, &[(100, 1.0), (100, 1.5)]);
    assert_eq!(run(&["estimate", s(&single)]).status.code(), Some(3));
}

struct Cluster {
    _dir: tempfile::TempDir,
    root: PathBuf,
    a: RowMatrix,
    x_path: PathBuf,
    x: Vec<f64>,
}

fn provision_cluster(scheme: &str, workers: &[(f64, f64, u32)], r: usize, m: usize) -> (Cluster, Value) {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("cluster");
    let workers: Vec<Value> = workers.iter().map(|&(mu, alpha, p)| json!({"mu": mu, "alpha": alpha, "p": p})).collect();
    let scenario = write_json(dir.path(), "s.json", &json!({"r": r, "m": m, "scheme": scheme, "workers": workers}));
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let a = RowMatrix::gaussian(r, m, &mut rng);
    let a_path = dir.path().join("a.bin");
    a.save(&a_path).unwrap();
    let x = RowMatrix::gaussian(1, m, &mut rng);
    let x_path = dir.path().join("x.bin");
    x.save(&x_path).unwrap();
    let report = stdout_json(&run(&["provision", s(&scenario), "--dir", s(&root), "--matrix", s(&a_path)]));
    (Cluster { _dir: dir, root, a, x_path, x: x.into_vec() }, report)
}

fn residual(y: &[f64], expected: &[f64]) -> f64 {
    let err: f64 = y.iter().zip(expected).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let norm: f64 = expected.iter().map(|v| v * v).sum::<f64>().sqrt();
    err / norm
}

fn worker_dir(root: &Path, i: usize) -> PathBuf {
    root.join(format!("worker-{i}"))
}

#[test]
fn loopback_run_with_three_worker_processes() {
    let (c, report) = provision_cluster("bpcc", &[(2.0, 0.2, 4), (1.0, 0.3, 3), (4.0, 0.1, 5)], 90, 16);
    assert_eq!(report["r"], 90);
    let workers: Vec<WorkerProcess> = (0..3).map(|i| WorkerProcess::spawn(&worker_dir(&c.root, i), &[])).collect();
    let y_path = c.root.join("y.bin");
    let out = run(&[
        "master",
        "--task",
        s(&c.root),
        "--connect",
        &addresses(&workers),
        "--input",
        s(&c.x_path),
        "--output",
        s(&y_path),
    ]);
    let metrics = stdout_json(&out);
    assert_eq!(metrics["success"], true);
    assert!(metrics["decode_time"].as_f64().unwrap() >= 0.0);
    let y = RowMatrix::load(&y_path).unwrap().into_vec();
    assert!(residual(&y, &c.a.matvec(&c.x)) < 1e-8);
}

#[test]
fn loopback_run_survives_a_dropped_worker() {
    let (c, report) = provision_cluster("bpcc", &[(1.0, 0.05, 3), (1.0, 0.05, 3), (1.0, 0.05, 3)], 60, 10);
    let loads = u64s(&report["loads"]);
    let q: u64 = loads.iter().sum();
    let min = *loads.iter().min().unwrap();
    assert!(q - min >= 60, "not enough redundancy: {loads:?}");
    let dropped = loads.iter().position(|&l| l == min).unwrap();
    let workers: Vec<WorkerProcess> = (0..3)
        .map(|i| {
            let extra: &[&str] = if i == dropped { &["--drop"] } else { &[] };
            WorkerProcess::spawn(&worker_dir(&c.root, i), extra)
        })
        .collect();
    let y_path = c.root.join("y.bin");
    let metrics = stdout_json(&run(&[
        "master",
        "--task",
        s(&c.root),
        "--connect",
        &addresses(&workers),
        "--input",
        s(&c.x_path),
        "--output",
        s(&y_path),
    ]));
    assert_eq!(metrics["success"], true);
    assert_eq!(metrics["rows_delivered"][dropped], 0);
    let y = RowMatrix::load(&y_path).unwrap().into_vec();
    assert!(residual(&y, &c.a.matvec(&c.x)) < 1e-8);
}

#[test]
fn uncoded_run_with_a_dropped_worker_fails() {
    let (c, _) = provision_cluster("uniform", &[(1.0, 0.05, 1), (1.0, 0.05, 1), (1.0, 0.05, 1)], 60, 10);
    let workers: Vec<WorkerProcess> = (0..3)
        .map(|i| {
            let extra: &[&str] = if i == 1 { &["--drop"] } else { &[] };
            WorkerProcess::spawn(&worker_dir(&c.root, i), extra)
        })
        .collect();
    let out = run(&[
        "master",
        "--task",
        s(&c.root),
        "--connect",
        &addresses(&workers),
        "--input",
        s(&c.x_path),
        "--timeout",
        "1",
    ]);
    assert_eq!(out.status.code(), Some(3));
    let metrics: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(metrics["success"], false);
    assert!(metrics["failure"].as_str().unwrap().contains("timed out"));
}

#[test]
fn master_reports_unreachable_workers() {
    let (c, _) = provision_cluster("uniform", &[(1.0, 0.05, 1), (1.0, 0.05, 1)], 20, 4);
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap().to_string();
    drop(listener);
    let out = run(&[
        "master",
        "--task",
        s(&c.root),
        "--connect",
        &format!("{addr},{addr}"),
        "--input",
        s(&c.x_path),
        "--connect-timeout",
        "0.3",
    ]);
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).contains("worker 0"));
}

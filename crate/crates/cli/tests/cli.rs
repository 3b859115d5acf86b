use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sdemap::metrics::{aggregate, RunSummary};
use sdemap_cli::commands::{self, Context, Options};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_sdemap"));
    c.env_remove(commands::OUT_DIR_ENV);
    c
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn numeric_rows(path: &Path) -> Vec<Vec<f64>> {
    fs::read_to_string(path).unwrap().lines().skip(2).map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect()
}

fn without_wall_time(mut v: serde_json::Value) -> serde_json::Value {
    if let Some(est) = v.get_mut("estimates").and_then(|e| e.as_object_mut()) {
        for rec in est.values_mut() {
            rec.as_object_mut().unwrap().remove("wall_time");
        }
    }
    v
}

const DUFFING: &str = "benchmark = \"duffing-gaussian\"\nt_f = 10.0\nseed = 1\n";

#[test]
fn simulate_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", DUFFING);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = run(&["simulate", "--config", s(&cfg), "--out", s(out)]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["trajectory.csv", "dataset.csv", "simulation.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let meta: serde_json::Value = serde_json::from_slice(&fs::read(a.join("simulation.json")).unwrap()).unwrap();
    assert_eq!(meta["seed"], 1);
    assert_eq!(meta["scheme"], "order15_additive");
    assert_eq!(meta["theta"]["d"], 0.2);
    assert!(meta["config_sha256"].as_str().unwrap().len() == 64);
}

#[test]
fn seed_override_and_output_env() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", DUFFING);
    let out = dir.path().join("env-out");
    let o =
        bin().args(["simulate", "--config", s(&cfg), "--seed-override", "9"]).env(commands::OUT_DIR_ENV, &out).output().unwrap();
    assert!(o.status.success());
    let meta: serde_json::Value = serde_json::from_slice(&fs::read(out.join("simulation.json")).unwrap()).unwrap();
    assert_eq!(meta["seed"], 9);
}

#[test]
fn holmes_rand_measurements_lie_on_the_bin_lattice() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", "benchmark = \"holmes-rand\"\nt_f = 50.0\nseed = 4\n");
    let out = dir.path().join("o");
    assert!(run(&["simulate", "--config", s(&cfg), "--out", s(&out)]).status.success());
    let rows = numeric_rows(&out.join("dataset.csv"));
    assert_eq!(rows.len(), 501);
    for r in rows {
        let k = r[1] / 0.05;
        assert!((k - k.round()).abs() < 1e-9, "{}", r[1]);
    }
}

#[test]
fn config_errors_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    for (text, needle) in [
        ("benchmark = \"duffing-gaussian\"\n", "t_f"),
        ("benchmark = \"duffing-gaussian\"\nt_f = 10.0\nrefinement = 1\n", "refinement"),
        ("benchmark = \"duffing-gaussian\"\nt_f = 10.0\n[known]\nalpha = 1.0\n", "known.alpha"),
    ] {
        let cfg = write_config(dir.path(), "bad.toml", text);
        let o = run(&["simulate", "--config", s(&cfg), "--out", s(&dir.path().join("o"))]);
        assert_eq!(o.status.code(), Some(2));
        assert!(String::from_utf8_lossy(&o.stderr).contains(needle), "{}", String::from_utf8_lossy(&o.stderr));
    }
}

#[test]
fn io_errors_exit_with_code_three() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["simulate", "--config", s(&dir.path().join("missing.toml"))]);
    assert_eq!(o.status.code(), Some(3));
    let cfg = write_config(dir.path(), "c.toml", DUFFING);
    let blocker = dir.path().join("file");
    fs::write(&blocker, "").unwrap();
    let o = run(&["simulate", "--config", s(&cfg), "--out", s(&blocker.join("sub"))]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn estimate_writes_paths_and_a_reproducible_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", &format!("{DUFFING}truth = \"sim/trajectory.csv\"\n"));
    let sim = dir.path().join("sim");
    assert!(run(&["simulate", "--config", s(&cfg), "--out", s(&sim)]).status.success());
    let data = sim.join("dataset.csv");
    let mut reports = Vec::new();
    for out in ["e1", "e2"] {
        let out = dir.path().join(out);
        let o = run(&["estimate", "--config", s(&cfg), "--dataset", s(&data), "--out", s(&out)]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        assert!(String::from_utf8_lossy(&o.stderr).contains("Lipschitz"));
        assert!(out.join("path_map.csv").exists() && out.join("path_mee.csv").exists());
        let v: serde_json::Value = serde_json::from_slice(&fs::read(out.join("estimate.json")).unwrap()).unwrap();
        reports.push(v);
    }
    let rec = &reports[0]["estimates"]["map"];
    assert!(rec["ise"].as_f64().unwrap() > 0.0);
    assert!(rec["wall_time"].as_f64().unwrap() > 0.0);
    for key in ["value", "prior", "likelihood", "energy", "correction"] {
        assert!(rec["objective"][key].is_number(), "{key}");
    }
    assert_eq!(reports[0]["estimates"]["mee"]["objective"]["correction"], 0.0);
    assert_eq!(without_wall_time(reports[0].clone()), without_wall_time(reports[1].clone()));
    assert_eq!(fs::read(dir.path().join("e1/path_map.csv")).unwrap(), fs::read(dir.path().join("e2/path_map.csv")).unwrap());
}

#[test]
fn dataset_mismatch_exits_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let long = write_config(dir.path(), "long.toml", "benchmark = \"duffing-gaussian\"\nt_f = 20.0\nseed = 1\n");
    let short = write_config(dir.path(), "short.toml", DUFFING);
    let sim = dir.path().join("sim");
    assert!(run(&["simulate", "--config", s(&long), "--out", s(&sim)]).status.success());
    let o =
        run(&["estimate", "--config", s(&short), "--dataset", s(&sim.join("dataset.csv")), "--out", s(&dir.path().join("e"))]);
    assert_eq!(o.status.code(), Some(2));
    let hr = write_config(dir.path(), "hr.toml", "benchmark = \"holmes-rand\"\nt_f = 20.0\n");
    let o = run(&["estimate", "--config", s(&hr), "--dataset", s(&sim.join("dataset.csv")), "--out", s(&dir.path().join("e"))]);
    assert_eq!(o.status.code(), Some(2), "off-lattice measurements");
}

#[test]
fn linear_gaussian_estimate_matches_the_smoother_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "lin.toml",
        "benchmark = \"duffing-gaussian\"\nt_f = 10.0\nseed = 3\nestimators = [\"mee\"]\noracle = true\n\
         [known]\na = 0.0\nb = -1.0\nd = 0.2\nsigma_y = 0.1\n[solver]\ngrad_tol = 1e-9\nmax_iters = 5000\n",
    );
    let out = dir.path().join("o");
    assert!(run(&["simulate", "--config", s(&cfg), "--out", s(&out)]).status.success());
    let o = run(&["estimate", "--config", s(&cfg), "--dataset", s(&out.join("dataset.csv")), "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let est = numeric_rows(&out.join("path_mee.csv"));
    let rts = numeric_rows(&out.join("rts_oracle.csv"));
    assert_eq!(est.len(), rts.len());
    let sup = est.iter().zip(&rts).flat_map(|(a, b)| (1..3).map(move |i| (a[i] - b[i]).abs())).fold(0.0, f64::max);
    assert!(sup < 1e-6, "sup-norm distance {sup}");
    for r in &rts {
        assert!(r[3] > 0.0 && r[4] > 0.0);
    }
}

#[test]
fn oracle_rejects_a_nonlinear_drift() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.toml",
        &format!("{DUFFING}oracle = true\n[known]\na = 1.0\nb = -1.0\nd = 0.2\nsigma_y = 0.1\n"),
    );
    let out = dir.path().join("o");
    assert!(run(&["simulate", "--config", s(&cfg), "--out", s(&out)]).status.success());
    let o = run(&["estimate", "--config", s(&cfg), "--dataset", s(&out.join("dataset.csv")), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("affine"));
}

const BATCH: &str = "benchmark = \"duffing-gaussian\"\nt_f = 10.0\nseed = 7\nreplicates = 4\n";

#[test]
fn montecarlo_is_independent_of_worker_count() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "mc.toml", BATCH);
    let mut outputs = Vec::new();
    for (name, workers) in [("w1", "1"), ("w4", "4"), ("w4b", "4")] {
        let out = dir.path().join(name);
        let o = run(&["montecarlo", "--config", s(&cfg), "--out", s(&out), "--workers", workers]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        outputs.push(out);
    }
    let jsonl = fs::read(outputs[0].join("runs.jsonl")).unwrap();
    for out in &outputs[1..] {
        assert_eq!(jsonl, fs::read(out.join("runs.jsonl")).unwrap());
        assert_eq!(fs::read(outputs[0].join("aggregate.json")).unwrap(), fs::read(out.join("aggregate.json")).unwrap());
    }
    let runs: Vec<RunSummary> = String::from_utf8(jsonl).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(runs.iter().map(|r| r.seed).collect::<Vec<_>>(), vec![7, 8, 9, 10]);
    let agg: serde_json::Value = serde_json::from_slice(&fs::read(outputs[0].join("aggregate.json")).unwrap()).unwrap();
    assert_eq!(agg["summary"], serde_json::to_value(aggregate(&runs)).unwrap());
    assert_eq!(agg["completed"], 4);
}

#[test]
fn montecarlo_reports_incomplete_batches() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "mc.toml", &format!("{BATCH}[known]\nsigma_y = -1.0\n"));
    let out = dir.path().join("o");
    let o = run(&["montecarlo", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(4));
    let text = fs::read_to_string(out.join("runs.jsonl")).unwrap();
    assert_eq!(text.lines().count(), 4);
    let run: RunSummary = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    assert!(run.error.is_some());
}

#[test]
fn convergence_tables() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "conv.toml",
        "benchmark = \"duffing-gaussian\"\nt_f = 20.0\nseed = 5\n[solver]\ngrad_tol = 1e-8\nmax_iters = 20000\n",
    );
    let ctx = Context::new(&Options { config: cfg.clone(), out: Some(dir.path().join("c")), ..Options::default() }).unwrap();
    let (rows, functional) = commands::convergence(&ctx).unwrap();
    for est in ["map", "mee"] {
        let d: Vec<f64> = rows.iter().filter(|r| r.estimator.name() == est).filter_map(|r| r.sup_distance).collect();
        assert_eq!(d.len(), 3);
        assert!(d.windows(2).all(|w| w[1] < w[0]), "{est}: {d:?}");
    }
    for w in functional.windows(2) {
        let r = w[0].trapezoidal_gap() / w[1].trapezoidal_gap();
        assert!((3.0..5.0).contains(&r), "{r}");
    }
    assert!(dir.path().join("c/convergence.csv").exists() && dir.path().join("c/functional.csv").exists());

    // refinement 0 equals a plain estimate on the measurement grid
    let sim = dir.path().join("sim");
    assert!(run(&["simulate", "--config", s(&cfg), "--out", s(&sim)]).status.success());
    let ctx = Context::new(&Options { config: cfg, out: Some(dir.path().join("e")), ..Options::default() }).unwrap();
    let report = commands::estimate_cmd(&ctx, &sim.join("dataset.csv")).unwrap();
    for r in rows.iter().filter(|r| r.refinement == 0) {
        let rec = &report.estimates[r.estimator.name()];
        assert_eq!(rec.objective.value, r.objective);
        assert_eq!(rec.theta.values().copied().collect::<Vec<_>>(), r.theta);
    }
}

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn thinlayer(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_thinlayer")).args(args).output().expect("spawn thinlayer")
}

fn run_in(dir: &Path, scenario: &str, threads: &str) -> Output {
    Command::new(env!("CARGO_BIN_EXE_thinlayer"))
        .args(["run", "--scenario", scenario, "--output-dir"])
        .arg(dir)
        .env("THINLAYER_THREADS", threads)
        .output()
        .expect("spawn thinlayer")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn zero_dynamics_matches_golden_ledger() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run_in(tmp.path(), "zero-dynamics", "1");
    assert!(out.status.success(), "{}", stderr(&out));
    let got = fs::read(tmp.path().join("ledger.csv")).unwrap();
    let want = fs::read(Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/zero-dynamics.csv")).unwrap();
    assert_eq!(got, want);
}

#[test]
fn repeated_runs_are_bitwise_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let c = tempfile::tempdir().unwrap();
    for (dir, threads) in [(&a, "1"), (&b, "1"), (&c, "4")] {
        let out = run_in(dir.path(), "ablation-margin", threads);
        assert!(out.status.success(), "{}", stderr(&out));
    }
    let la = fs::read(a.path().join("ledger.csv")).unwrap();
    assert_eq!(la, fs::read(b.path().join("ledger.csv")).unwrap());
    assert_eq!(la, fs::read(c.path().join("ledger.csv")).unwrap());
}

#[test]
fn ablation_margin_reports_retreat() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run_in(tmp.path(), "ablation-margin", "2");
    assert!(out.status.success(), "{}", stderr(&out));
    let summary: serde_json::Value = serde_json::from_slice(&fs::read(tmp.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["status"], "ok");
    assert!(summary["sum_R"].as_f64().unwrap() > 0.0);
    assert!(summary["max_balance_residual"].as_f64().unwrap() < 1e-12);
    assert_eq!(summary["flags"].as_array().unwrap().len(), 0);

    let ledger = fs::read_to_string(tmp.path().join("ledger.csv")).unwrap();
    assert_eq!(ledger.lines().count(), 201);
    assert!(!ledger.contains("-0.0000000000000000e0"));
    for name in ["field_0000.csv", "field_0010.csv", "field_0200.csv", "run.log"] {
        assert!(tmp.path().join(name).exists(), "{name} missing");
    }
    let log = fs::read_to_string(tmp.path().join("run.log")).unwrap();
    assert!(log.contains("step=200 stage=1 iterations="));
    assert!(log.contains("expect R>0 pass"));
}

#[test]
fn config_file_with_relative_output_dir() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.json");
    fs::write(
        &cfg,
        r#"{
            "mesh": {"kind": "interval", "a": 0.0, "b": 1.0, "n": 30},
            "flux": {"kind": "porous-medium", "k": 1.0, "gamma": 2.0},
            "source": {"kind": "linear", "a": 0.4, "b": [-1.0, 0.0]},
            "initial": {"kind": "dome", "center": [0.0, 0.0], "radius": 0.7, "height": 0.3},
            "scheme": {"kind": "dirk-sstable2"},
            "dt": 0.02,
            "steps": 15,
            "backend": "fve",
            "snapshot_every": 5,
            "output_dir": "out"
        }"#,
    )
    .unwrap();
    let out = thinlayer(&["run", cfg.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    let dir = tmp.path().join("out");
    assert_eq!(fs::read_to_string(dir.join("ledger.csv")).unwrap().lines().count(), 16);
    assert!(dir.join("field_0015.csv").exists());
    let summary: serde_json::Value = serde_json::from_slice(&fs::read(dir.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["backend"], "fve");
    assert_eq!(summary["scheme"], "dirk-sstable2");
}

#[test]
fn bad_values_and_unknown_keys_are_config_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.json");

    fs::write(&cfg, r#"{"scenario": "ablation-margin", "backend": "fem"}"#).unwrap();
    let out = thinlayer(&["run", cfg.to_str().unwrap(), "--output-dir", tmp.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("backend"), "{}", stderr(&out));

    fs::write(&cfg, r#"{"scenario": "ablation-margin", "stepz": 3}"#).unwrap();
    let out = thinlayer(&["run", cfg.to_str().unwrap(), "--output-dir", tmp.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("stepz"), "{}", stderr(&out));

    fs::write(&cfg, r#"{"scenario": "ablation-margin", "scheme": {"kind": "theta", "theta": 3.0}}"#).unwrap();
    let out = thinlayer(&["run", cfg.to_str().unwrap(), "--output-dir", tmp.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));

    let out = thinlayer(&["run", "--scenario", "no-such-scenario"]);
    assert_eq!(out.status.code(), Some(2));
    let out = thinlayer(&["run"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn non_convergence_leaves_last_iterate() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("tight.json");
    fs::write(&cfg, r#"{"scenario": "plap-1.5", "solver": {"max_iter": 1}, "output_dir": "out"}"#).unwrap();
    let out = thinlayer(&["run", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let dir = tmp.path().join("out");
    assert_eq!(fs::read_to_string(dir.join("last_iterate.csv")).unwrap().lines().count(), 100);
    let summary: serde_json::Value = serde_json::from_slice(&fs::read(dir.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["status"], "failed");
}

#[test]
fn thread_variable_is_validated() {
    let out = Command::new(env!("CARGO_BIN_EXE_thinlayer"))
        .args(["list-scenarios"])
        .env("THINLAYER_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn verify_suites() {
    let out = thinlayer(&["verify", "inequalities", "--samples", "20000"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().filter(|l| l.contains("\"violations\":0")).count(), 3);

    let alias = thinlayer(&["verify-inequalities", "--samples", "20000"]);
    assert_eq!(alias.stdout, text.as_bytes());

    let out = thinlayer(&["verify", "monotonicity", "--flux", "pme", "--samples", "200"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let out = thinlayer(&["verify", "monotonicity", "--flux", "plap", "--p", "1.5", "--backend", "fve", "--samples", "200"]);
    assert!(out.status.success(), "{}", stderr(&out));

    // above the advective bound of 2 the operator loses monotonicity
    let out = thinlayer(&["verify", "monotonicity", "--flux", "advective", "--dt", "4", "--samples", "500"]);
    assert_eq!(out.status.code(), Some(1));

    let out = thinlayer(&["verify", "flux-assumptions", "--flux", "doubly", "--r", "2"]);
    assert!(out.status.success(), "{}", stderr(&out));
}

#[test]
fn study_writes_table() {
    let tmp = tempfile::tempdir().unwrap();
    let out = thinlayer(&["study", "--scenario", "ablation-margin", "--output-dir", tmp.path().to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    let table = fs::read_to_string(tmp.path().join("study.csv")).unwrap();
    assert_eq!(table.lines().count(), 7);
}

#[test]
fn list_scenarios_names_the_catalog() {
    let out = thinlayer(&["list-scenarios"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for name in ["zero-dynamics", "fixed-boundary", "advance-only", "ablation-margin", "ablation-margin-fve", "dome-2d"] {
        assert!(text.lines().any(|l| l.starts_with(name)), "{name} missing");
    }
}

use std::process::{Command, Output};

use ellpos_cli::{run, run_all_checks, Budgets, Experiment, ExperimentManifest};

fn ellpos(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ellpos")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn csv_starts_with_version_and_manifest() {
    let o = ellpos(&["moments", "--body", "cube", "--n", "16", "--samples", "2000", "--seed", "3"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    let mut lines = text.lines();
    let first = lines.next().unwrap();
    assert!(first.starts_with(&format!("# ellpos {} {{", ellpos_cli::VERSION)), "{first}");
    let manifest = ExperimentManifest::from_json(first.splitn(4, ' ').nth(3).unwrap()).unwrap();
    assert_eq!(manifest.experiment, Experiment::Moments);
    assert!(lines.next().unwrap().starts_with("body_hash,n,p,"));
    assert_eq!(lines.count(), 1);
}

#[test]
fn manifest_replay_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("first.csv");
    let o = ellpos(&[
        "superconc-scan",
        "--body",
        "lp:1",
        "--n",
        "32",
        "--param",
        "n=[32,64]",
        "--samples",
        "3000",
        "--seed",
        "11",
        "--out",
        first.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(&first).unwrap();
    let manifest_json = csv.lines().next().unwrap().splitn(4, ' ').nth(3).unwrap();
    let manifest_path = dir.path().join("manifest.json");
    std::fs::write(&manifest_path, manifest_json).unwrap();
    let replay = ellpos(&["--manifest", manifest_path.to_str().unwrap(), "--workers", "3"]);
    assert!(replay.status.success(), "{}", String::from_utf8_lossy(&replay.stderr));
    assert_eq!(stdout(&replay), csv);
}

#[test]
fn invalid_input_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"experiment":"moments","colour":"blue"}"#).unwrap();
    assert_eq!(ellpos(&["--manifest", bad.to_str().unwrap()]).status.code(), Some(2));
    assert_eq!(ellpos(&["moments", "--body", "blob", "--n", "4"]).status.code(), Some(2));
    assert_eq!(ellpos(&["moments", "--body", "lp:0.5", "--n", "4"]).status.code(), Some(2));
    assert_eq!(ellpos(&["moments"]).status.code(), Some(2));
    assert_eq!(ellpos(&["ell-solve", "--body", "cube", "--n", "4", "--param", "step=5"]).status.code(), Some(2));
    assert_eq!(ellpos(&["no-such-command"]).status.code(), Some(2));
}

#[test]
fn json_summary_carries_the_manifest() {
    let o = ellpos(&["ellipse-check", "--param", "pairs=2", "--param", "grid=100", "--json"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["version"], ellpos_cli::VERSION);
    assert_eq!(v["manifest"]["experiment"], "ellipse-check");
}

#[test]
fn tightened_check_fails_with_exit_one() {
    let o = ellpos(&["check", "--quick", "--tolerance-scale", "0.01"]);
    assert_eq!(o.status.code(), Some(1));
    let text = stdout(&o);
    assert_eq!(text.lines().count(), 8);
    assert!(text.lines().all(|l| l.contains(" PASS ") || l.contains(" FAIL ")));
}

#[test]
fn quick_check_is_deterministic_across_pools() {
    let run_in = |threads| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| run_all_checks(5, 1.0, Budgets::quick()).unwrap())
    };
    let (a, b) = (run_in(1), run_in(4));
    assert_eq!(a.to_json(), b.to_json());
    assert_eq!(a.criteria.len(), 8);
}

#[test]
fn every_experiment_runs_on_small_inputs() {
    let cases: &[(Experiment, &str, &[(&str, &str)])] = &[
        (Experiment::Moments, r#"{"family":"euclidean","dim":8}"#, &[("samples", "2000")]),
        (Experiment::SuperconcScan, r#"{"family":"cube","dim":8}"#, &[("samples", "2000"), ("n", "[8,16]")]),
        (Experiment::EllSolve, r#"{"family":"lp_ball","dim":4,"p":1.5}"#, &[("schedule", "[1000,2000]")]),
        (Experiment::Balance, r#"{"family":"cube","dim":4}"#, &[("samples", "2000")]),
        (Experiment::Deviation, r#"{"family":"cube","dim":16}"#, &[("samples", "10000")]),
        (Experiment::SectionsScan, r#"{"family":"cube","dim":16}"#, &[("trials", "2"), ("k", "2")]),
        (Experiment::JohnCounterexample, "", &[("n", "512"), ("trials", "2"), ("cylinder_trials", "500")]),
        (Experiment::DvoretzkyDim, r#"{"family":"euclidean","dim":16}"#, &[("samples", "2000")]),
        (Experiment::EllipseCheck, "", &[("pairs", "1"), ("grid", "100")]),
        (Experiment::SingularValues, "", &[("m", "40"), ("k", "10"), ("trials", "256")]),
    ];
    for (experiment, body, params) in cases {
        let mut m = ExperimentManifest::new(*experiment);
        if !body.is_empty() {
            m.body = Some(serde_json::from_str(body).unwrap());
        }
        for (k, v) in *params {
            m.set(k, serde_json::from_str::<serde_json::Value>(v).unwrap());
        }
        let out = run(&m).unwrap_or_else(|e| panic!("{}: {e}", experiment.name()));
        assert!(!out.rows.is_empty(), "{}", experiment.name());
        let columns = out.columns.split(',').count();
        for row in &out.rows {
            assert_eq!(row.split(',').count(), columns, "{}: {row}", experiment.name());
        }
    }
}

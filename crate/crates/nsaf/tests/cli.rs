//! End-to-end pipeline tests at small scale: persistence layout, exit codes,
//! idempotency, restart consistency and byte-level determinism.

use std::path::Path;
use std::process::Command;

use nsaf::analysis::Statement;
use nsaf::config::RunConfig;
use nsaf::pipeline::{cmd_analyze, cmd_simulate, DirLock};
use nsaf::solver::InitialKind;

fn small_config() -> RunConfig {
    RunConfig {
        grid_points: 128,
        grid_length: 40.0,
        dt: 0.02,
        t_end: 8.0,
        snapshot_start: 0.25,
        snapshot_count: 12,
        kind: InitialKind::GaussianCurl,
        statements: "prop-2.1 q=1 mu=0".into(),
        ..RunConfig::default()
    }
}

fn read(dir: &Path, name: &str) -> Vec<u8> {
    std::fs::read(dir.join(name)).unwrap_or_else(|e| panic!("missing {name}: {e}"))
}

#[test]
fn simulate_writes_expected_layout_and_is_idempotent() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("run");
    let cfg = small_config();
    cmd_simulate(&cfg, &dir).unwrap();
    assert!(dir.join("fields/snap_0000_omega.nsaf").exists());
    assert!(dir.join("fields/snap_0012_u2.nsaf").exists());
    assert!(dir.join("diagnostics.csv").exists());
    assert!(dir.join("manifest.json").exists());
    let diag1 = read(&dir, "diagnostics.csv");
    // second invocation is a no-op
    cmd_simulate(&cfg, &dir).unwrap();
    assert_eq!(diag1, read(&dir, "diagnostics.csv"));
    // snapshot count matches config (+ initial data)
    let count = std::fs::read_dir(dir.join("fields")).unwrap().count();
    assert_eq!(count, 3 * (cfg.snapshot_count + 1));
}

#[test]
fn pipeline_outputs_are_bit_identical_across_runs() {
    let cfg = small_config();
    let stmts = Statement::parse_list(&cfg.statements).unwrap();
    let mut outputs = Vec::new();
    for _ in 0..2 {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("run");
        cmd_simulate(&cfg, &dir).unwrap();
        cmd_analyze(&cfg, &dir, &stmts).unwrap();
        outputs.push((
            read(&dir, "diagnostics.csv"),
            read(&dir, "moments.csv"),
            read(&dir, "decay_reports.json"),
            read(&dir, "identities.json"),
        ));
    }
    assert_eq!(outputs[0].0, outputs[1].0, "diagnostics.csv differs");
    assert_eq!(outputs[0].1, outputs[1].1, "moments.csv differs");
    assert_eq!(outputs[0].2, outputs[1].2, "decay_reports.json differs");
    assert_eq!(outputs[0].3, outputs[1].3, "identities.json differs");
}

#[test]
fn raising_t_end_preserves_earlier_snapshots() {
    // snapshot grids chosen so the earlier times coincide exactly
    let mut short = small_config();
    short.snapshot_start = 1.0;
    short.snapshot_count = 2;
    short.t_end = 2.0; // snapshots 1, 2
    let mut long = short.clone();
    long.snapshot_count = 3;
    long.t_end = 4.0; // snapshots 1, 2, 4

    let sa = short.solver_config().unwrap().snapshot_times;
    let sb = long.solver_config().unwrap().snapshot_times;
    assert_eq!(sa[..2], sb[..2], "premise: common snapshot times");

    let tmp = tempfile::tempdir().unwrap();
    let (da, db) = (tmp.path().join("a"), tmp.path().join("b"));
    cmd_simulate(&short, &da).unwrap();
    cmd_simulate(&long, &db).unwrap();
    for i in 0..=2 {
        let name = format!("fields/snap_{i:04}_omega.nsaf");
        assert_eq!(read(&da, &name), read(&db, &name), "{name} differs");
    }
}

#[test]
fn lock_excludes_concurrent_pipelines() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("run");
    let _held = DirLock::acquire(&dir).unwrap();
    assert!(DirLock::acquire(&dir).is_err());
    drop(_held);
    assert!(DirLock::acquire(&dir).is_ok());
}

#[test]
fn cli_binary_exit_codes_and_report_formats() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg_path = tmp.path().join("run.conf");
    let run_dir = tmp.path().join("run");
    std::fs::write(&cfg_path, small_config().serialize()).unwrap();

    let bin = env!("CARGO_BIN_EXE_nsaf");
    let status = Command::new(bin)
        .args(["simulate", "--config"])
        .arg(&cfg_path)
        .arg("--out")
        .arg(&run_dir)
        .status()
        .unwrap();
    assert!(status.success());

    // config error -> exit code 2
    let bad = tmp.path().join("bad.conf");
    std::fs::write(&bad, "grid.bogus = 1\n").unwrap();
    let status = Command::new(bin)
        .args(["simulate", "--config"])
        .arg(&bad)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));

    let status = Command::new(bin)
        .args(["analyze", "--run"])
        .arg(&run_dir)
        .args(["--statements", "prop-2.1 q=1 mu=0"])
        .status()
        .unwrap();
    assert!(status.success());

    for format in ["json", "csv", "svg"] {
        let out = Command::new(bin)
            .args(["report", "--run"])
            .arg(&run_dir)
            .args(["--format", format])
            .output()
            .unwrap();
        assert!(out.status.success(), "report --format {format}");
        assert!(!out.stdout.is_empty());
    }
    assert!(run_dir.join("decay_reports.csv").exists());
    assert!(run_dir.join("plots").is_dir());

    let out = Command::new(bin)
        .args(["identities", "--run"])
        .arg(&run_dir)
        .output()
        .unwrap();
    assert!(out.status.success());
}

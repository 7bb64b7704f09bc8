mod common;

use std::process::Command as Process;

use superchan::Error;
use superchan_cli::config::ExperimentKind;
use superchan_cli::record::read_records;
use superchan_cli::{execute, exit_code, Command};

#[test]
fn one_point_drive_sweep_has_one_row_per_scheme() {
    let dir = tempfile::tempdir().unwrap();
    let table = common::qam16(dir.path()).unwrap();
    let mut cfg = common::tiny(ExperimentKind::VpSweep, dir.path(), &table);
    cfg.link.channel.n_channels = 1;
    cfg.link.channel.eta = 0.0;
    let out = execute(Command::VpSweep, &cfg).unwrap();
    assert!(out.failures.is_empty(), "{:?}", out.failures);
    let rows = read_records(&dir.path().join("tiny_vp_sweep.csv")).unwrap();
    let schemes: Vec<&str> = rows.iter().map(|r| r.scheme.as_str()).collect();
    assert_eq!(schemes, ["baseline", "baseline_no_dpd", "ae"]);
    assert!(rows.iter().all(|r| r.v_p == 1.0 && r.ser.is_some()));
    assert!(dir.path().join("tiny_vp_sweep.svg").exists());
    // the AE checkpoint is written and referenced
    assert!(std::path::Path::new(&rows[2].checkpoint).exists());
}

#[test]
fn ablation_at_one_guard_band_has_five_stages() {
    let dir = tempfile::tempdir().unwrap();
    let table = common::qam16(dir.path()).unwrap();
    let mut cfg = common::tiny(ExperimentKind::Ablation, dir.path(), &table);
    cfg.grids.eta = vec![0.05];
    let out = execute(Command::Ablation, &cfg).unwrap();
    assert!(out.failures.is_empty(), "{:?}", out.failures);
    let rows = read_records(&dir.path().join("tiny_ablation.csv")).unwrap();
    let labels: Vec<&str> = rows.iter().map(|r| r.scheme.as_str()).collect();
    assert_eq!(labels, ["frozen", "+NN4", "+NN2", "+NN3", "+NN1"]);
}

#[test]
fn guard_band_sweep_writes_rows_and_reduction() {
    let dir = tempfile::tempdir().unwrap();
    let table = common::qam16(dir.path()).unwrap();
    let cfg = common::tiny(ExperimentKind::GuardbandSweep, dir.path(), &table);
    let out = execute(Command::Guardband, &cfg).unwrap();
    assert!(out.failures.is_empty(), "{:?}", out.failures);
    let rows = read_records(&dir.path().join("tiny_guardband_sweep.csv")).unwrap();
    // ae, baseline and the single-channel floor per guard band
    assert_eq!(rows.len(), 3 * cfg.grids.eta.len());
    let text = std::fs::read_to_string(dir.path().join("tiny_guardband_reduction.txt")).unwrap();
    assert!(text.contains("reduction = "));
}

#[test]
fn empty_guard_band_grid_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let table = common::qam16(dir.path()).unwrap();
    let mut cfg = common::tiny(ExperimentKind::GuardbandSweep, dir.path(), &table);
    cfg.grids.eta.clear();
    let err = execute(Command::Guardband, &cfg).unwrap_err();
    assert!(matches!(err, Error::InvalidArgument(_)), "{err}");
    assert_eq!(exit_code(&err), 2);
}

#[test]
fn missing_checkpoint_is_reported_as_not_found() {
    let dir = tempfile::tempdir().unwrap();
    let table = common::qam16(dir.path()).unwrap();
    let mut cfg = common::tiny(ExperimentKind::FreqResponse, dir.path(), &table);
    cfg.checkpoints.single = Some(dir.path().join("nope.json"));
    cfg.checkpoints.multi = Some(dir.path().join("nope.json"));
    let err = execute(Command::FreqResponse, &cfg).unwrap_err();
    assert!(matches!(err, Error::NotFound(_)), "{err}");

    let mut cfg = common::tiny(ExperimentKind::SingleEval, dir.path(), &table);
    cfg.baseline.constellation = Some(dir.path().join("missing.csv"));
    assert!(matches!(execute(Command::Eval, &cfg), Err(Error::NotFound(_))));
}

#[test]
fn kind_mismatch_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let table = common::qam16(dir.path()).unwrap();
    let cfg = common::tiny(ExperimentKind::Ablation, dir.path(), &table);
    assert!(matches!(execute(Command::VpSweep, &cfg), Err(Error::InvalidArgument(_))));
}

#[test]
fn binary_reports_config_errors_with_status_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "kind = \"guardband_sweep\"\n[grids]\neta = []\n").unwrap();
    let bin = env!("CARGO_BIN_EXE_superchan-cli");
    let status = Process::new(bin).args(["guardband", "--config"]).arg(&bad).status().unwrap();
    assert_eq!(status.code(), Some(2));
    let status = Process::new(bin).args(["eval", "--config"]).arg(dir.path().join("absent.toml")).status().unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn binary_evaluates_the_baseline() {
    let dir = tempfile::tempdir().unwrap();
    let table = common::qam16(dir.path()).unwrap();
    let mut cfg = common::tiny(ExperimentKind::SingleEval, dir.path(), &table);
    cfg.link.channel.n_channels = 1;
    let path = dir.path().join("eval.toml");
    std::fs::write(&path, cfg.to_toml().unwrap()).unwrap();
    let out = Process::new(env!("CARGO_BIN_EXE_superchan-cli"))
        .args(["eval", "--config"])
        .arg(&path)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = read_records(&dir.path().join("tiny_single_eval.csv")).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].scheme, "baseline");
    assert!(rows[0].ser.is_some_and(|s| s < 0.5));
}

#[test]
fn readme_config_example_parses() {
    let readme = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../README.md")).unwrap();
    let block = readme.split("```toml\n").nth(1).and_then(|s| s.split("```").next()).unwrap();
    let cfg = superchan_cli::config::ExperimentConfig::from_toml(block).unwrap();
    assert_eq!(cfg.kind, Some(ExperimentKind::GuardbandSweep));
    assert_eq!(cfg.link.rolloff, 0.01);
}

use std::path::Path;
use std::process::{Command, Output};

use rhoset::experiment::ExperimentConfig;
use rhoset::group::GroupKind;

fn rhoset(args: &[&str], out: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_rhoset"));
    cmd.args(args).env_remove("RHOSET_OUT");
    if let Some(out) = out {
        cmd.arg("--out").arg(out);
    }
    cmd.output().expect("failed to launch rhoset")
}

const SMALL: [&str; 8] = ["--group", "S3", "--models", "2", "--epochs", "150", "--hidden", "16"];

fn report_args(extra: &[&'static str]) -> Vec<&'static str> {
    let mut args = vec!["report"];
    args.extend_from_slice(&SMALL);
    args.extend_from_slice(extra);
    args
}

/// Report rows with the timing column dropped.
fn report_without_times(dir: &Path) -> Vec<Vec<String>> {
    let text = std::fs::read_to_string(dir.join("report.csv")).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let t = header.iter().position(|h| *h == "wall_time_s").expect("wall_time_s column");
    lines
        .map(|l| l.split(',').enumerate().filter(|(i, _)| *i != t).map(|(_, v)| v.to_string()).collect())
        .collect()
}

#[test]
fn empty_pool_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let out = rhoset(&["report", "--group", "S3", "--models", "0"], Some(dir.path()));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("report.csv").exists());
}

#[test]
fn report_is_reproducible_apart_from_timings() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for dir in [&a, &b] {
        let out = rhoset(&report_args(&["--seed", "5"]), Some(dir.path()));
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let rows = report_without_times(a.path());
    assert_eq!(rows.len(), 2 * 3);
    assert_eq!(rows, report_without_times(b.path()));
    for name in ["summary.csv", "loss_bounds.csv", "rhosets.csv", "S3-0.weights.json", "S3-1.curve.csv"] {
        assert!(a.path().join(name).exists(), "missing {name}");
    }
    assert_eq!(
        std::fs::read(a.path().join("S3-0.weights.json")).unwrap(),
        std::fs::read(b.path().join("S3-0.weights.json")).unwrap()
    );
}

#[test]
fn unknown_verifier_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = rhoset(&report_args(&["--verifiers", "brute,oracle"]), Some(dir.path()));
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("oracle"));
}

#[test]
fn zero_epochs_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = rhoset(&["train", "--group", "S3", "--models", "1", "--epochs", "0"], Some(dir.path()));
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn output_directory_comes_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["train"];
    args.extend_from_slice(&SMALL);
    let out = Command::new(env!("CARGO_BIN_EXE_rhoset")).args(&args).env("RHOSET_OUT", dir.path()).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("S3-0.weights.json").exists());
    assert!(dir.path().join("S3-1.weights.json").exists());
}

#[test]
fn config_file_drives_the_pipeline_and_flags_override_it() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::defaults_for(GroupKind::Symmetric(3));
    cfg.models = 3;
    cfg.train.epochs = 100;
    cfg.train.hidden = 8;
    cfg.out = dir.path().join("from-config");
    let path = dir.path().join("config.json");
    std::fs::write(&path, serde_json::to_string(&cfg).unwrap()).unwrap();

    let out = rhoset(&["train", "--config", path.to_str().unwrap(), "--models", "1"], None);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(cfg.out.join("S3-0.weights.json").exists());
    assert!(!cfg.out.join("S3-1.weights.json").exists());
    let weights: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(cfg.out.join("S3-0.weights.json")).unwrap()).unwrap();
    assert_eq!(weights["m"], 8);
}

#[test]
fn verify_reuses_saved_weights() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["train"];
    args.extend_from_slice(&SMALL);
    assert!(rhoset(&args, Some(dir.path())).status.success());
    let weights = dir.path().to_str().unwrap().to_string();
    let verified = dir.path().join("verified");
    let out = rhoset(&["verify", "--weights", &weights, "--verifiers", "brute,irrep"], Some(&verified));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(report_without_times(&verified).len(), 4);
}

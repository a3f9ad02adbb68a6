use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use finer_core::synthetic::{write_toy_dataset, ToySpec};

fn finer(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_finer"))
        .args(args)
        .env_remove("FINER_CACHE_DIR")
        .output()
        .unwrap()
}

fn toy(dir: &Path, extra: &str) -> PathBuf {
    write_toy_dataset(&dir.join("data"), &ToySpec::default()).unwrap();
    let config = dir.join("run.toml");
    std::fs::write(
        &config,
        format!("manifest = \"data/manifest.csv\"\nrun_dir = \"out\"\nk_augment = 2\n{extra}"),
    )
    .unwrap();
    config
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

#[test]
fn missing_manifest_exits_2_naming_path() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.toml");
    std::fs::write(&config, "manifest = \"nowhere/m.csv\"\nmock = true\n").unwrap();
    let out = finer(&["discover", "--config", config.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nowhere/m.csv"));
}

#[test]
fn bad_config_key_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let config = toy(dir.path(), "alhpa = 0.1\n");
    let out = finer(&["discover", "--config", config.to_str().unwrap(), "--mock"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("alhpa"));
}

#[test]
fn mock_run_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let config = toy(dir.path(), "");
    let c = config.to_str().unwrap();
    let discovered = ok(&finer(&["discover", "--config", c, "--mock"]));
    assert!(discovered.contains("15 candidate names, 5 kept"), "{discovered}");
    ok(&finer(&["classify", "--config", c, "--mock"]));
    let evaluated = ok(&finer(&["evaluate", "--config", c, "--mock", "--sweep", "alpha"]));
    assert!(evaluated.contains("cACC 100.0 sACC 100.0 over 20 images"), "{evaluated}");

    let out = dir.path().join("out");
    for f in [
        "config.toml",
        "supercategories.json",
        "attributes.json",
        "descriptions.json",
        "candidates_raw.json",
        "candidates_refined.json",
        "classifier.json",
        "predictions.json",
        "report.json",
        "predictions.csv",
        "sweep_alpha.csv",
    ] {
        assert!(out.join(f).exists(), "{f}");
    }
    assert!(!out.join(".lock").exists());
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("report.json")).unwrap()).unwrap();
    let stage: serde_json::Value =
        serde_json::from_slice(&std::fs::read(out.join("predictions.json")).unwrap()).unwrap();
    assert_eq!(report["config_digest"], stage["config_digest"]);
    assert_eq!(report["matching"].as_array().unwrap().len(), 5);

    let table = ok(&finer(&["report", out.to_str().unwrap()]));
    assert!(table.contains("| . | 100.0 | 100.0 | 20 |"), "{table}");
    assert!(out.join("summary.csv").exists());
}

#[test]
fn changed_alpha_is_rejected_downstream() {
    let dir = tempfile::tempdir().unwrap();
    let config = toy(dir.path(), "mock = true\n");
    let c = config.to_str().unwrap();
    ok(&finer(&["discover", "--config", c]));
    let out = finer(&["classify", "--config", c, "--alpha", "0.2"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("[classify]") && err.contains("current config"), "{err}");
}

#[test]
fn seeds_fan_out_and_aggregate() {
    let dir = tempfile::tempdir().unwrap();
    let config = toy(dir.path(), "mock = true\n");
    let c = config.to_str().unwrap();
    for cmd in ["discover", "classify", "evaluate"] {
        ok(&finer(&[cmd, "--config", c, "--seeds", "1..2"]));
    }
    let out = dir.path().join("out");
    assert!(out.join("seed-1/report.json").exists());
    assert!(out.join("seed-2/report.json").exists());
    let table = ok(&finer(&["report", "--config", c]));
    assert!(table.contains("| seed-1 |"), "{table}");
    assert!(table.contains("| mean | 100.0 | 100.0 | 20 |"), "{table}");
}

#[test]
fn held_lock_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let config = toy(dir.path(), "mock = true\n");
    std::fs::create_dir_all(dir.path().join("out")).unwrap();
    std::fs::write(dir.path().join("out/.lock"), "1").unwrap();
    let out = finer(&["discover", "--config", config.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("locked"));
}

#[test]
fn seed_and_seeds_conflict() {
    let out = finer(&["discover", "--config", "x.toml", "--seed", "1", "--seeds", "1..3"]);
    assert_eq!(out.status.code(), Some(2));
}

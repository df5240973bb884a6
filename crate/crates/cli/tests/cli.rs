use std::path::Path;
use std::process::{Command, Output};

fn nlfronts(root: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nlfronts"))
        .args(args)
        .env("NLFRONTS_OUTPUT_ROOT", root)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn kernel_check_writes_a_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = nlfronts(dir.path(), &["kernel-check", "--output-dir", "k"]);
    assert_eq!(out.status.code(), Some(0), "{}", stdout(&out));
    assert!(stdout(&out).contains("PASS kernel_mass_error"));
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("k/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["exit_code"], 0);
    assert_eq!(manifest["config_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn steep_reaction_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = nlfronts(
        dir.path(),
        &[
            "--set",
            "reaction.amplitude=40",
            "--set",
            "reaction.target_fprime_max=null",
            "wave",
        ],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("max f'"));
    // Rejected before any stage ran.
    assert!(!dir.path().join("runs/default/manifest.json").exists());
}

#[test]
fn unknown_preset_and_field_are_validation_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(nlfronts(dir.path(), &["--preset", "nope", "kernel-check"]).status.code(), Some(2));
    assert_eq!(nlfronts(dir.path(), &["--set", "kernel.nope=1", "kernel-check"]).status.code(), Some(2));
}

#[test]
fn config_file_layers_over_a_preset() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("cfg.json");
    std::fs::write(&file, r#"{"preset": "both-negative", "seed": 5}"#).unwrap();
    let out = nlfronts(dir.path(), &["--config", file.to_str().unwrap(), "show-config"]);
    assert_eq!(out.status.code(), Some(0));
    let cfg: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(cfg["kernel"]["shift"], 0.8);
    assert_eq!(cfg["seed"], 5);
}

#[test]
fn quick_pipeline_is_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let out = nlfronts(dir.path(), &["--preset", "quick", "--output-dir", name, "-j", "2", "pipeline"]);
        assert_eq!(out.status.code(), Some(0), "{}", stdout(&out));
        (
            std::fs::read(dir.path().join(name).join("manifest.json")).unwrap(),
            std::fs::read(dir.path().join(name).join("diagnostics.json")).unwrap(),
        )
    };
    let (m1, d1) = run("a");
    let (m2, d2) = run("b");
    assert_eq!(d1, d2);
    assert_eq!(m1, m2);
}

#[test]
fn sweep_writes_one_manifest_per_point() {
    let dir = tempfile::tempdir().unwrap();
    let out = nlfronts(
        dir.path(),
        &["--preset", "quick", "--output-dir", "sw", "sweep", "--axis", "seed=1,2", "--axis", "comparison.pairs=2"],
    );
    assert_eq!(out.status.code(), Some(0), "{}", stdout(&out));
    for i in 0..2 {
        assert!(dir.path().join(format!("sw/point-{i:03}/manifest.json")).exists());
    }
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("sw/sweep.json")).unwrap()).unwrap();
    assert_eq!(summary["points"].as_array().unwrap().len(), 2);
}

#[test]
fn wrong_case_expectation_is_an_invariant_violation() {
    let dir = tempfile::tempdir().unwrap();
    let out = nlfronts(dir.path(), &["entire", "--n-list", "5", "--case-expect", "a"]);
    assert_eq!(out.status.code(), Some(4), "{}", stdout(&out));
    assert!(stdout(&out).contains("[entire] FAILED"));
    assert!(stdout(&out).contains("[waves] ok"));
}

//! Command line behaviour: outputs, overrides and exit codes.

use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_blowup-lab"))
}

fn tmp(name: &str) -> std::path::PathBuf {
    let d = std::env::temp_dir().join("blowup-lab-cli").join(name);
    let _ = std::fs::remove_dir_all(&d);
    std::fs::create_dir_all(&d).unwrap();
    d
}

#[test]
fn ground_state_writes_samples_under_the_output_root() {
    let root = tmp("gs");
    let out = bin().args(["ground-state", "--dim", "1", "--name", "q1"]).env("BLOWUP_LAB_OUT", &root).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!((v["mass2"].as_f64().unwrap() - 3f64.sqrt() * std::f64::consts::PI / 2.0).abs() < 1e-6);
    assert!(root.join("q1").join("q.csv").exists());
}

#[test]
fn config_file_and_overrides() {
    let dir = tmp("cfg");
    let cfg = dir.join("run.cfg");
    std::fs::write(&cfg, "# law only\nsigma = 0.5\nE0 = 0\n").unwrap();
    let out = bin()
        .args(["law", "--config", cfg.to_str().unwrap(), "--sigma", "0.3", "-s", "profile_h=0.02"])
        .env("BLOWUP_LAB_OUT", &dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["constants"]["sigma"].as_f64(), Some(0.3));
    assert_eq!(v["constants"]["e0"].as_f64(), Some(0.0));
}

#[test]
fn validation_errors_exit_with_two() {
    let out = bin().args(["ground-state", "--sigma", "1.5"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("[validation]"));
    let out = bin().args(["law", "-s", "nonsense"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn numerical_failures_exit_with_three_and_a_stage_tag() {
    // A coarse grid cannot meet the identity tolerance.
    let dir = tmp("num");
    let out = bin().args(["linops", "--check", "-s", "profile_h=0.2"]).env("BLOWUP_LAB_OUT", &dir).output().unwrap();
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("[linops]"));
}

#[test]
fn fit_rate_reads_a_modulation_table() {
    let dir = tmp("fit");
    let table = dir.join("modulation.csv");
    let mut text = String::from("t,lambda,b\n");
    for i in 0..200 {
        let t = -0.042 - 8e-3 * 0.97f64.powi(i);
        let d: f64 = -0.042 - t;
        text.push_str(&format!("{t:.17e},{:.17e},{:.17e}\n", 2.0 * d.powf(1.0 / 1.3), 3.0 * d.powf(0.7 / 1.3)));
    }
    std::fs::write(&table, text).unwrap();
    let out = bin()
        .args(["fit-rate", "--table", table.to_str().unwrap(), "--origin", "fitted"])
        .env("BLOWUP_LAB_OUT", &dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!((v["exponent"].as_f64().unwrap() - 1.0 / 1.3).abs() < 1e-6);
    assert!((v["t_hat"].as_f64().unwrap() + 0.042).abs() < 1e-8);
}

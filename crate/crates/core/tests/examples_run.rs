//! Every example runs to completion.

use std::path::PathBuf;
use std::process::Command;

fn example(name: &str) -> PathBuf {
    // target/<profile>/deps/<test binary> -> target/<profile>/examples/<name>
    let exe = std::env::current_exe().unwrap();
    let dir = exe.parent().and_then(|p| p.parent()).unwrap().join("examples");
    dir.join(format!("{name}{}", std::env::consts::EXE_SUFFIX))
}

fn run(name: &str, expect: &str) {
    let path = example(name);
    assert!(path.exists(), "example binary {} not built", path.display());
    let out = Command::new(&path).output().unwrap();
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(out.status.success(), "{name} failed: {}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout.contains(expect), "{name} output lacks `{expect}`:\n{stdout}");
}

#[test]
fn ground_state() {
    run("ground_state", "closed form");
}

#[test]
fn linops_identities() {
    run("linops_identities", "(Q,ρ)");
}

#[test]
fn profile_expansion() {
    run("profile_expansion", "‖Ψ‖");
}

#[test]
fn blowup_law() {
    run("blowup_law", "λ1=");
}

#[test]
fn solitary_wave() {
    run("solitary_wave", "max error");
}

#[test]
fn decomposition() {
    run("decomposition", "rebuild");
}

#[test]
fn rate_fit() {
    run("rate_fit", "Fitted");
}

#[test]
fn nls_minus() {
    run("nls_minus", "supercritical_minus");
}

//! Reproducibility of written outputs and re-entry from persisted stages.

use blowup_lab::blowup_law::{select_initial_params, time_maps, LawConstants};
use blowup_lab::harness::{decompose_run, pipeline_nls_minus, simulate, Config, ExperimentSpec, InitialData};
use std::path::Path;

fn spec(out: &Path, extra: &str) -> ExperimentSpec {
    let mut c =
        Config::parse(&format!("r_max=30\nmax_element=0.5\nh0=1e-3\nc_dt=1e-3\nwindow=0.02\nprofile_h=0.02\n{extra}"))
            .unwrap();
    c.set("out", out.display());
    ExperimentSpec::from_config(&c).unwrap()
}

fn scratch(tag: &str) -> std::path::PathBuf {
    let d = std::env::temp_dir().join(format!("blowup-lab-pipeline-{}-{tag}", std::process::id()));
    let _ = std::fs::remove_dir_all(&d);
    d
}

#[test]
fn repeated_runs_write_identical_tables() {
    let (a, b) = (scratch("a"), scratch("b"));
    pipeline_nls_minus(&spec(&a, "sign=-1")).unwrap();
    pipeline_nls_minus(&spec(&b, "sign=-1")).unwrap();
    for f in ["critical_minus.csv", "critical_plus.csv", "supercritical_minus.csv"] {
        let x = std::fs::read(a.join(f)).unwrap();
        assert!(!x.is_empty());
        assert_eq!(x, std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let m = std::fs::read_to_string(a.join("manifest.json")).unwrap();
    assert!(m.contains("inputs_sha256"));
}

#[test]
fn decomposition_reenters_from_saved_states() {
    let dir = scratch("sim");
    let s = spec(&dir, "sign=1\nt_end=-0.0499\ncheckpoint_every=10");
    let res = simulate(&s, InitialData::Profile, 1).unwrap();
    assert!(res.steps > 0);
    let exp = s.expansion().unwrap();
    let out = dir.join("modulation.csv");
    let recs = decompose_run(&dir, &exp, &out).unwrap();
    assert!(recs.len() >= 2);
    let r = &recs[0];
    assert!(r.valid, "{r:?}");
    let lc = LawConstants::from_expansion(&exp, s.e0, s.lambda0).unwrap();
    let (l1, b1) = select_initial_params(time_maps(s.t1, &lc).unwrap(), &exp, &lc).unwrap();
    assert!((r.lambda / l1 - 1.0).abs() < 1e-3, "{} vs {l1}", r.lambda);
    assert!((r.b / b1 - 1.0).abs() < 1e-2, "{} vs {b1}", r.b);
    assert!(out.exists());
}

//! Short (NLS-) scenario run on a coarse mesh: rescaled Q under both signs
//! and a supercritical negative-energy datum.
use blowup_lab::harness::{pipeline_nls_minus, Config, ExperimentSpec};

fn main() -> blowup_lab::Result<()> {
    let dir = std::env::temp_dir().join("blowup_lab_example_minus");
    let cfg = Config::parse(&format!(
        "name = minus\nsign = -1\nwindow = 0.1\nr_max = 30\nmax_element = 0.5\nh0 = 1e-3\nsuper_lambda = 0.25\nc_dt = 1e-3\nout = {}\n",
        dir.display()
    ))?;
    let rep = pipeline_nls_minus(&ExperimentSpec::from_config(&cfg)?)?;
    for r in [&rep.critical_minus, &rep.critical_plus, &rep.supercritical_minus] {
        println!(
            "{:20} E={:+.4e} max ‖∇u‖/‖∇u₀‖={:.3} stop={:?} t={:.4}",
            r.label, r.energy0, r.max_grad_ratio, r.stop, r.t_final
        );
    }
    println!("reports under {}", dir.display());
    Ok(())
}

//! Propagate the one-dimensional solitary wave without potential and
//! measure the profile error after one unit of time.
use blowup_lab::evolve::{q_1d, run, EvolutionConfig, MeshConfig, SemFunction, SemSpace};
use num_complex::Complex64;

fn main() -> blowup_lab::Result<()> {
    let mesh = MeshConfig { degree: 6, h0: 0.05, grading: 1.1, max_element: 0.25, r_max: 20.0 };
    let space = SemSpace::new(1, 0.0, &mesh)?;
    let u0 = SemFunction::from_sampler(&space, &|r: f64| Complex64::new(q_1d(r), 0.0));
    for dt in [4e-3, 2e-3, 1e-3] {
        let cfg = EvolutionConfig {
            sign: 0.0,
            sigma: 0.0,
            dt0: dt,
            adapt: false,
            c_dt: 0.0,
            t_start: 0.0,
            t_end: 1.0,
            checkpoint_every: 100,
            yoshida: false,
            floor_h: 0.0,
            grad_ceiling: None,
            grad_q2: 1.0,
            max_steps: 10_000_000,
            keep_states: false,
        };
        let res = run(u0.clone(), &cfg, &mut |_| Ok(None))?;
        let phase = Complex64::from_polar(1.0, 1.0);
        let err = space.radii().iter().map(|&r| (res.final_state.eval(r) - phase * q_1d(r)).norm()).fold(0.0, f64::max);
        println!("dt={dt:e}: max error {err:.3e}, mass drift {:.1e}", res.max_mass_drift);
    }
    Ok(())
}

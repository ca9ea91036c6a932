//! Decompose a perturbed, modulated profile and rebuild it.
use blowup_lab::ground_state::solve_ground_state;
use blowup_lab::linops::Linops;
use blowup_lab::modulation::{decompose, energy_h};
use blowup_lab::profile::build_expansion;
use blowup_lab::radial_core::RadialGrid;
use num_complex::Complex64;
use std::sync::Arc;

fn main() -> blowup_lab::Result<()> {
    let grid = RadialGrid::new(2, 0.02, 25.0)?;
    let b = solve_ground_state(&grid, 0.3, 1e-8)?;
    let exp = build_expansion(&b, Arc::new(Linops::new(&b)?), 0.3, 1, 0, 1e-4)?;
    let (l, bb, g) = (0.2, 0.1, 0.4);
    let p = exp.assemble_p(l, bb);
    let u = |r: f64| {
        let y = r / l;
        let bump = Complex64::new(0.02, 0.01) * (-(y - 1.0).powi(2)).exp();
        (p.sample(y) + bump) / l * Complex64::from_polar(1.0, -bb * y * y / 4.0 + g)
    };
    for guess in [(0.21, 0.08, 0.35), (0.19, 0.12, 0.45)] {
        let st = decompose(&u, guess, &exp, 1e-10)?;
        println!(
            "guess {guess:?}: λ={:.10} b={:.10} γ={:.10} ‖ε‖_H1={:.3e} rebuild {:.1e} ortho {:.1e} H={:.3e}",
            st.lambda,
            st.b,
            st.gamma,
            st.eps_h1,
            st.reconstruction_error,
            st.ortho_residuals.iter().fold(0.0f64, |a, v| a.max(v.abs())),
            energy_h(&st, &exp)
        );
    }
    Ok(())
}

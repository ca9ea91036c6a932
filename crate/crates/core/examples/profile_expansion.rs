//! Build the K=2, K'=1 profile expansion and list its solved slots.
use blowup_lab::ground_state::solve_ground_state;
use blowup_lab::linops::Linops;
use blowup_lab::profile::{beta_formula, build_expansion, PsiMode};
use blowup_lab::radial_core::RadialGrid;
use std::sync::Arc;

fn main() -> blowup_lab::Result<()> {
    let grid = RadialGrid::new(2, 0.02, 30.0)?;
    let b = solve_ground_state(&grid, 0.3, 1e-8)?;
    let ops = Arc::new(Linops::new(&b)?);
    let exp = build_expansion(&b, ops, 0.3, 2, 1, 1e-4)?;
    println!("β = {:.10} (closed form {:.10})", exp.beta(), beta_formula(&b, 0.3));
    for ((j, k), s) in exp.slots() {
        println!(
            "(j,k)=({j},{k}) β={:+.6e} c+={:+.3e} c-={:+.3e} residuals {:.1e} {:.1e}",
            s.beta, s.c_plus, s.c_minus, s.residual_plus, s.residual_minus
        );
    }
    let (lambda, bb) = (0.05, 0.1);
    // Ideal parameter flow: λ_s = -bλ, b_s = θ - b².
    let dbds = exp.assemble_theta(lambda, bb) - bb * bb;
    let (_, norm) = exp.residual_psi(lambda, bb, -bb * lambda, dbds, 1.0, PsiMode::Structural, 0.1);
    println!("‖Ψ‖ at λ={lambda}, b={bb}: {norm:.3e}");
    Ok(())
}

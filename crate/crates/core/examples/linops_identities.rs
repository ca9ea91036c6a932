//! Residuals of the linearized-operator identities at the ground state.
use blowup_lab::ground_state::solve_ground_state;
use blowup_lab::linops::Linops;
use blowup_lab::radial_core::RadialGrid;

fn main() -> blowup_lab::Result<()> {
    for dim in [1, 2] {
        let grid = RadialGrid::new(dim, 0.01, 30.0)?;
        let b = solve_ground_state(&grid, 0.3, 1e-8)?;
        let r = Linops::new(&b)?.identity_report(&b);
        println!("N={dim}");
        println!("  ‖L₋Q‖            {:.3e}", r.minus_q);
        println!("  ‖L₊ΛQ + 2Q‖      {:.3e}", r.plus_lambda_q);
        println!("  ‖L₋(y²Q) + 4ΛQ‖  {:.3e}", r.minus_r2q);
        println!("  ‖L₊ρ - y²Q‖      {:.3e}", r.plus_rho);
        println!("  (Q,ρ) = {:.8}  ½‖yQ‖² = {:.8}  ½‖y²Q‖² = {:.8}", r.q_rho, r.half_virial2, r.half_virial4);
    }
    Ok(())
}

//! Solve for the ground state in one and two dimensions and print its norms.
use blowup_lab::ground_state::solve_ground_state;
use blowup_lab::radial_core::RadialGrid;

fn main() -> blowup_lab::Result<()> {
    for dim in [1, 2] {
        let grid = RadialGrid::new(dim, 0.01, 30.0)?;
        let b = solve_ground_state(&grid, 0.3, 1e-8)?;
        println!(
            "N={dim}: Q(0)={:.10} ‖Q‖²={:.10} ‖∇Q‖²={:.10} GN ratio={:.12} residual={:.2e}",
            b.q0, b.mass2, b.grad2, b.gn_check, b.residual
        );
    }
    println!("N=1 closed form ‖Q‖² = √3π/2 = {:.10}", 3f64.sqrt() * std::f64::consts::PI / 2.0);
    Ok(())
}

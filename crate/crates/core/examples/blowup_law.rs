//! Law constants, the ℱ integral and the selected initial parameters.
use blowup_lab::blowup_law::{f_integral, f_leading, predicted_rates, select_initial_params, time_maps, LawConstants};
use blowup_lab::ground_state::solve_ground_state;
use blowup_lab::linops::Linops;
use blowup_lab::profile::build_expansion;
use blowup_lab::radial_core::RadialGrid;
use std::sync::Arc;

fn main() -> blowup_lab::Result<()> {
    let grid = RadialGrid::new(2, 0.02, 30.0)?;
    let b = solve_ground_state(&grid, 0.3, 1e-8)?;
    let exp = build_expansion(&b, Arc::new(Linops::new(&b)?), 0.3, 2, 1, 1e-4)?;
    let lc = LawConstants::from_expansion(&exp, 1.0, 0.1)?;
    println!("{lc:#?}");
    for l in [1e-2, 1e-3, 1e-4] {
        println!("ℱ({l:e}) = {:.8e}  leading {:.8e}", f_integral(l, &lc)?, f_leading(l, &lc));
    }
    let t1 = -0.05;
    let s1 = time_maps(t1, &lc)?;
    let (l1, b1) = select_initial_params(s1, &exp, &lc)?;
    println!("t1={t1} s1={s1:.6} λ1={l1:.6} b1={b1:.6}");
    for t in [-1e-2, -1e-3, -1e-4] {
        let (l, bb) = predicted_rates(t, &lc)?;
        println!("t={t:e}: λ≈{l:.6e} b≈{bb:.6e}");
    }
    Ok(())
}

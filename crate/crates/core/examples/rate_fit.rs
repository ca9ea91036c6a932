//! Configuration handling and power-law fitting on a synthetic trajectory.
use blowup_lab::harness::{correction_series, fit_rate, Config, ExperimentSpec, FitOrigin};

fn main() -> blowup_lab::Result<()> {
    let mut cfg = Config::parse("sigma = 0.3\nE0 = 1\nname = synthetic\n")?;
    cfg.set("t1", -0.05);
    let spec = ExperimentSpec::from_config(&cfg)?;
    let p = 1.0 / (1.0 + spec.sigma);
    // λ = C (T - t)^p (1 + 0.2 (T - t)^0.5) with T away from zero.
    let tstar = -0.042;
    let t: Vec<f64> = (0..300).map(|i| tstar - 8e-3 * 0.98f64.powi(i)).collect();
    let y: Vec<f64> = t.iter().map(|t| 2.19 * (tstar - t).powf(p) * (1.0 + 0.2 * (tstar - t).sqrt())).collect();
    for origin in [FitOrigin::Zero, FitOrigin::Fitted] {
        match fit_rate(&t, &y, (-1.0, 0.0), origin, p) {
            Ok(f) => println!(
                "{origin:?}: exponent {:.5} (predicted {p:.5}) T̂={:.6} r²={:.8}",
                f.exponent, f.t_hat, f.r_squared
            ),
            Err(e) => println!("{origin:?}: {e}"),
        }
    }
    let (_, order) = correction_series(&t, &y, tstar, 2.19, p);
    println!("correction order {order:.3}");
    Ok(())
}

//! Property tests for the algebraic and numerical invariants.

use blowup_lab::evolve::{MeshConfig, SemFunction, SemSpace, Stepper};
use blowup_lab::harness::{fit_rate, Config, FitOrigin};
use blowup_lab::modulation::fd_weights;
use blowup_lab::profile::{weight, FormalSeries};
use num_complex::Complex64;
use proptest::prelude::*;

fn series(terms: &[((u32, u32), f64, f64)], len: usize, max_weight: u32) -> FormalSeries {
    let mut s = FormalSeries::new(len, max_weight);
    for (k, &((m, n), re, im)) in terms.iter().enumerate() {
        let f: Vec<Complex64> =
            (0..len).map(|i| Complex64::new(1.0 + (i * (k + 1)) as f64 * 0.1, 0.3 * i as f64)).collect();
        s.add_term((m, n), Complex64::new(re, im), &f);
    }
    s
}

fn term() -> impl Strategy<Value = ((u32, u32), f64, f64)> {
    ((0u32..4, 0u32..3), -2.0..2.0f64, -2.0..2.0f64)
}

fn close(a: &[Complex64], b: &[Complex64], tol: f64) -> bool {
    a.iter().zip(b).all(|(x, y)| (x - y).norm() <= tol * (1.0 + x.norm().max(y.norm())))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn series_product_commutes_and_associates(
        a in prop::collection::vec(term(), 1..4),
        b in prop::collection::vec(term(), 1..4),
        c in prop::collection::vec(term(), 1..4),
        la in 0.01..0.5f64,
        bb in 0.01..0.5f64,
    ) {
        let (sa, sb, sc) = (series(&a, 3, 8), series(&b, 3, 8), series(&c, 3, 8));
        let ab = sa.mul(&sb);
        let ba = sb.mul(&sa);
        prop_assert!(close(&ab.evaluate(la, bb), &ba.evaluate(la, bb), 1e-13));
        let l = ab.mul(&sc);
        let r = sa.mul(&sb.mul(&sc));
        prop_assert!(close(&l.evaluate(la, bb), &r.evaluate(la, bb), 1e-12));
        for k in l.terms().keys() {
            prop_assert!(weight(*k) <= 8);
        }
    }

    #[test]
    fn untruncated_product_evaluates_pointwise(
        a in prop::collection::vec(term(), 1..4),
        b in prop::collection::vec(term(), 1..4),
        la in 0.01..0.5f64,
        bb in 0.01..0.5f64,
    ) {
        // Factor weights are at most 7, so nothing is dropped at 20.
        let (sa, sb) = (series(&a, 3, 20), series(&b, 3, 20));
        let prod: Vec<Complex64> = sa.evaluate(la, bb).iter().zip(sb.evaluate(la, bb)).map(|(x, y)| x * y).collect();
        prop_assert!(close(&sa.mul(&sb).evaluate(la, bb), &prod, 1e-12));
    }

    #[test]
    fn fit_recovers_exact_power_laws(p in 0.2..1.5f64, amp in 0.1..10.0f64, tstar in -0.1..0.1f64) {
        let t: Vec<f64> = (0..60).map(|i| tstar - 1e-2 * 0.93f64.powi(i)).collect();
        let y: Vec<f64> = t.iter().map(|t| amp * (tstar - t).powf(p)).collect();
        let f = fit_rate(&t, &y, (-1.0, 1.0), FitOrigin::Given(tstar), p).unwrap();
        prop_assert!((f.exponent - p).abs() < 1e-9);
        prop_assert!((f.amplitude / amp - 1.0).abs() < 1e-8);
        let g = fit_rate(&t, &y, (-1.0, 1.0), FitOrigin::Fitted, p).unwrap();
        prop_assert!((g.t_hat - tstar).abs() < 1e-7 * (1.0 + tstar.abs()));
    }

    #[test]
    fn config_canonical_text_round_trips(
        entries in prop::collection::btree_map("[a-z][a-z0-9_]{0,8}", "[A-Za-z0-9.+-]{1,10}", 0..8)
    ) {
        let mut c = Config::default();
        for (k, v) in &entries {
            c.set(k, v);
        }
        prop_assert_eq!(Config::parse(&c.canonical()).unwrap(), c);
    }

    #[test]
    fn finite_difference_weights_are_exact_on_low_degree(
        mut xs in prop::collection::vec(-1.0..1.0f64, 5),
        x0 in -1.0..1.0f64,
    ) {
        xs.sort_by(f64::total_cmp);
        prop_assume!(xs.windows(2).all(|w| w[1] - w[0] > 0.05));
        let w = fd_weights(x0, &xs, 1);
        for deg in 0..5 {
            let d: f64 = w.iter().zip(&xs).map(|(w, x)| w * x.powi(deg)).sum();
            let exact = if deg == 0 { 0.0 } else { deg as f64 * x0.powi(deg - 1) };
            prop_assert!((d - exact).abs() < 1e-7 * (1.0 + exact.abs()));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn linear_flow_and_phase_preserve_mass(
        amp in 0.1..3.0f64,
        width in 0.3..2.0f64,
        chirp in -1.0..1.0f64,
        dt in 1e-4..1e-2f64,
        sign in prop::sample::select(vec![-1.0, 0.0, 1.0]),
    ) {
        let mesh = MeshConfig { degree: 4, h0: 0.01, grading: 1.3, max_element: 0.5, r_max: 12.0 };
        let space = SemSpace::new(2, 0.3, &mesh).unwrap();
        let u = SemFunction::from_sampler(&space, &|r: f64| {
            Complex64::from_polar(amp * (-(r / width).powi(2)).exp(), chirp * r * r)
        });
        let mut st = Stepper::new(&space, sign);
        let m0 = u.mass2();
        let v = st.strang(&u.values, dt).unwrap();
        let m1 = space.mass2(&v);
        prop_assert!((m1 / m0 - 1.0).abs() < 1e-12);
    }
}

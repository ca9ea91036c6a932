//! Acceptance suite: one test per criterion, each printing a single
//! `criterion N: PASS|FAIL` line with the measured quantities.
//!
//! Criteria 7, 8 and 10 share one end-to-end blow-up run and criteria 9 and
//! 10 share the (NLS-) scenarios; each is computed once per process.

use blowup_lab::blowup_law::{b_app, f_integral, f_leading, lambda_app, select_initial_params, LawConstants};
use blowup_lab::evolve::{q_1d, run, EvolutionConfig, MeshConfig, SemFunction, SemSpace};
use blowup_lab::ground_state::{solve_ground_state, GroundStateBundle};
use blowup_lab::harness::{
    linear_fit, pipeline_minimal_blowup, pipeline_nls_minus, BlowupReport, Config, ExperimentSpec, MinusReport,
};
use blowup_lab::linops::Linops;
use blowup_lab::modulation::decompose;
use blowup_lab::profile::{beta_formula, build_expansion, ProfileExpansion, PsiMode};
use blowup_lab::radial_core::RadialGrid;
use num_complex::Complex64;
use std::sync::{Arc, OnceLock};
use std::time::Instant;

const SIGMA: f64 = 0.3;

fn verdict(n: u32, pass: bool, detail: String) {
    use std::io::Write;
    // Written to the raw stream so the line shows even when output is captured.
    let line = format!("criterion {n}: {} | {detail}\n", if pass { "PASS" } else { "FAIL" });
    let _ = std::io::stderr().lock().write_all(line.as_bytes());
    assert!(pass, "criterion {n} failed: {detail}");
}

fn bundle(dim: usize, h: f64) -> GroundStateBundle {
    let g = RadialGrid::new(dim, h, 30.0).unwrap();
    solve_ground_state(&g, SIGMA, 1e-8).unwrap()
}

fn expansion(dim: usize, h: f64) -> ProfileExpansion {
    let b = bundle(dim, h);
    let ops = Arc::new(Linops::new(&b).unwrap());
    build_expansion(&b, ops, SIGMA, 2, 1, 1e-4).unwrap()
}

fn out_dir(name: &str) -> String {
    std::env::temp_dir().join("blowup-lab-acceptance").join(name).display().to_string()
}

fn blowup() -> &'static Result<BlowupReport, String> {
    static RUN: OnceLock<Result<BlowupReport, String>> = OnceLock::new();
    RUN.get_or_init(|| {
        let mut c = Config::default();
        c.set("name", "minimal");
        c.set("out", out_dir("minimal"));
        let spec = ExperimentSpec::from_config(&c).map_err(|e| e.to_string())?;
        pipeline_minimal_blowup(&spec).map_err(|e| e.to_string())
    })
}

fn minus() -> &'static Result<MinusReport, String> {
    static RUN: OnceLock<Result<MinusReport, String>> = OnceLock::new();
    RUN.get_or_init(|| {
        let cfg = format!(
            "name = minus\nsign = -1\nwindow = 5\nr_max = 30\nmax_element = 0.5\nh0 = 1e-3\nc_dt = 1e-3\nout = {}\n",
            out_dir("minus")
        );
        let spec = ExperimentSpec::from_config(&Config::parse(&cfg).unwrap()).map_err(|e| e.to_string())?;
        pipeline_nls_minus(&spec).map_err(|e| e.to_string())
    })
}

#[test]
fn criterion_01_operator_identities() {
    let start = Instant::now();
    let mut worst_op: f64 = 0.0;
    let mut worst_pair: f64 = 0.0;
    for dim in [1, 2] {
        let b = bundle(dim, 0.01);
        let r = Linops::new(&b).unwrap().identity_report(&b);
        worst_op = worst_op.max(r.max_operator_residual());
        worst_pair = worst_pair.max(r.q_rho_vs_virial4);
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        1,
        worst_op < 1e-5 && worst_pair < 1e-6 && secs < 30.0,
        format!(
            "max operator residual / ‖Q‖ = {worst_op:.2e} (< 1e-5), |(Q,ρ) - ½‖|y|²Q‖²| relative = {worst_pair:.2e} (< 1e-6), {secs:.1} s"
        ),
    );
}

#[test]
fn criterion_02_ground_state_constants() {
    let b1 = bundle(1, 0.01);
    let exact = 3f64.sqrt() * std::f64::consts::PI / 2.0;
    let e1 = (b1.mass2 / exact - 1.0).abs();
    let m_coarse = bundle(2, 0.02).mass2;
    let b2 = bundle(2, 0.01);
    let digits = |x: f64| format!("{:.4e}", x);
    let stable = digits(m_coarse) == digits(b2.mass2) && (b2.mass2 - 11.70).abs() < 5e-3;
    let gn = (b1.gn_check - 1.0).abs().max((b2.gn_check - 1.0).abs());
    verdict(
        2,
        e1 < 1e-6 && stable && gn < 1e-6,
        format!(
            "N=1 mass error {e1:.2e}, N=2 mass {:.6} vs {:.6} at h/2, GN ratio defect {gn:.2e}",
            m_coarse, b2.mass2
        ),
    );
}

#[test]
fn criterion_03_profile_solvability() {
    // β₀₀ reaches 1e-8 only once the grid error (fourth order in h) is below it.
    let mut worst_beta: f64 = 0.0;
    let mut worst_res: f64 = 0.0;
    let mut worst_cplus: f64 = 0.0;
    for dim in [1, 2] {
        let b = bundle(dim, 0.005);
        let ops = Arc::new(Linops::new(&b).unwrap());
        let e = build_expansion(&b, ops, SIGMA, 2, 1, 1e-4).unwrap();
        worst_beta = worst_beta.max((e.beta() / beta_formula(&b, SIGMA) - 1.0).abs());
        for ((j, k), s) in e.slots() {
            worst_res = worst_res.max(s.residual_plus).max(s.residual_minus);
            if j + k <= 2 {
                worst_cplus = worst_cplus.max(s.c_plus.abs());
            }
        }
    }
    verdict(
        3,
        worst_beta < 1e-8 && worst_res < 1e-7 && worst_cplus == 0.0,
        format!("β₀₀ relative error {worst_beta:.2e}, max slot residual {worst_res:.2e}, max |c⁺| for j+k ≤ K = {worst_cplus:e}"),
    );
}

#[test]
fn criterion_04_residual_order() {
    let start = Instant::now();
    let e = expansion(2, 0.01);
    let lc = LawConstants::from_expansion(&e, 1.0, 0.1).unwrap();
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for i in 0..=20 {
        let s = 100.0 * 10f64.powf(i as f64 / 20.0);
        let (l, b) = (lambda_app(s, &lc).unwrap(), b_app(s, &lc).unwrap());
        // Exact modulation equations: λ_s = -bλ, b_s = θ - b².
        let dbds = e.assemble_theta(l, b) - b * b;
        let (_, n) = e.residual_psi(l, b, -b * l, dbds, 1.0, PsiMode::Structural, 0.1);
        xs.push((b * b + l.powf(e.alpha())).ln());
        ys.push(n.ln());
    }
    let (slope, _, _) = linear_fit(&xs, &ys);
    let secs = start.elapsed().as_secs_f64();
    verdict(4, slope >= 3.7 && secs < 120.0, format!("log-log slope {slope:.3} (≥ 3.7), {secs:.1} s"));
}

#[test]
fn criterion_05_energy_expansion() {
    let e = expansion(2, 0.01);
    let a = e.alpha();
    let y2 = e.bundle().virial2;
    let mut d = Vec::new();
    for l in [1e-1f64, 3e-2, 1e-2, 3e-3, 1e-3] {
        for f in [0.0, 0.3, 1.0, 3.0] {
            let b: f64 = f * l.powf(a / 2.0);
            let (_, scaled) = e.mass_scaled_energy(l, b);
            let pred = y2 * (b * b - 2.0 * e.beta() / (2.0 - a) * l.powf(a));
            d.push((8.0 * scaled - pred).abs() / (l.powf(a) * (b * b + l.powf(a))));
        }
    }
    let mut sorted = d.clone();
    sorted.sort_by(f64::total_cmp);
    let median = 0.5 * (sorted[9] + sorted[10]);
    let max = sorted[19];
    verdict(5, max < 10.0 * median, format!("normalized defect median {median:.3e}, max {max:.3e} (< 10× median)"));
}

#[test]
fn criterion_06_law_asymptotics() {
    let e = expansion(2, 0.01);
    let lc = LawConstants::from_expansion(&e, 1.0, 0.1).unwrap();
    let a = lc.alpha;
    let env = |l: f64| l.powf(-a / 4.0) + l.powf(2.0 - 1.5 * a);
    let f_ratio = |l: f64| (f_integral(l, &lc).unwrap() - f_leading(l, &lc)).abs() / env(l);
    let decade_max =
        |lo: f64, f: &dyn Fn(f64) -> f64| (0..=10).map(|i| f(lo * 10f64.powf(i as f64 / 10.0))).fold(0.0, f64::max);
    // Constant fitted on the first decade; the next decade must stay within 2× of it.
    let c_f = decade_max(1e-3, &f_ratio);
    let next_f = decade_max(1e-4, &f_ratio);
    let close = |s1: f64| {
        let (l1, b1) = select_initial_params(s1, &e, &lc).unwrap();
        let d = ((l1 / lambda_app(s1, &lc).unwrap()).powf(a / 2.0) - 1.0).abs()
            + (b1 / b_app(s1, &lc).unwrap() - 1.0).abs();
        d / (s1.powf(-0.5) + s1.powf(2.0 - 4.0 / a))
    };
    let c_s = decade_max(1e2, &close);
    let next_s = decade_max(1e3, &close);
    verdict(
        6,
        next_f <= 2.0 * c_f && next_s <= 2.0 * c_s,
        format!(
            "ℱ defect constant {c_f:.3} on [1e-3,1e-2], {next_f:.3} on [1e-4,1e-3]; closeness constant {c_s:.3} on s1 ∈ [1e2,1e3], {next_s:.3} on [1e3,1e4]"
        ),
    );
}

#[test]
fn criterion_07_decomposition_round_trip() {
    let e = expansion(2, 0.02);
    let mut worst_rec: f64 = 0.0;
    let mut worst_agree: f64 = 0.0;
    let mut worst_ortho: f64 = 0.0;
    // Synthetic states inside the small-λ regime (λ ≤ λ₀ = 0.1) where the
    // decomposition is unique.
    for &(l, b, g, amp) in &[(0.1, 0.15, 0.4, 0.02), (0.05, 0.2, -1.0, 0.01), (0.01, 0.05, 2.0, 0.05)] {
        let p = e.assemble_p(l, b);
        let u = move |r: f64| {
            let y = r / l;
            let bump = Complex64::new(amp, -0.5 * amp) * (-(y - 1.0f64).powi(2)).exp();
            (p.sample(y) + bump) / l * Complex64::from_polar(1.0, -b * y * y / 4.0 + g)
        };
        let s1 = decompose(&u, (1.05 * l, 0.8 * b, g - 0.05), &e, 1e-10).unwrap();
        let s2 = decompose(&u, (0.95 * l, 1.2 * b, g + 0.05), &e, 1e-10).unwrap();
        for s in [&s1, &s2] {
            worst_rec = worst_rec.max(s.reconstruction_error);
            worst_ortho = s.ortho_residuals.iter().fold(worst_ortho, |m, v| m.max(v.abs()));
        }
        worst_agree = worst_agree
            .max(((s1.lambda - s2.lambda) / l).abs())
            .max((s1.b - s2.b).abs())
            .max((s1.gamma - s2.gamma).abs());
    }
    let run = match blowup() {
        Ok(r) => r,
        Err(msg) => return verdict(7, false, format!("blow-up run failed: {msg}")),
    };
    let acc: Vec<_> = run.records.iter().filter(|r| r.valid).collect();
    let run_rec = acc.iter().map(|r| r.reconstruction).fold(0.0, f64::max);
    let run_ortho = acc.iter().flat_map(|r| r.ortho.iter().map(|v| v.abs())).fold(0.0, f64::max);
    verdict(
        7,
        worst_rec.max(run_rec) < 1e-12 && worst_agree < 1e-8 && worst_ortho.max(run_ortho) < 1e-10,
        format!(
            "synthetic: reconstruction {worst_rec:.1e}, two-guess spread {worst_agree:.1e}, orthogonality {worst_ortho:.1e}; run ({} accepted samples): reconstruction {run_rec:.1e}, orthogonality {run_ortho:.1e}",
            acc.len()
        ),
    );
}

#[test]
fn criterion_08_end_to_end_rate() {
    let r = match blowup() {
        Ok(r) => r,
        Err(msg) => return verdict(8, false, format!("blow-up run failed: {msg}")),
    };
    let p_l = 1.0 / (1.0 + SIGMA);
    let p_b = (1.0 - SIGMA) / (1.0 + SIGMA);
    let (t0, t1) = r.lambda_fit.window;
    let in_win: Vec<usize> = (0..r.mods.len())
        .filter(|&i| r.records.iter().filter(|x| x.valid).nth(i).is_some_and(|x| x.t >= t0 && x.t <= t1))
        .collect();
    let acc: Vec<_> = r.records.iter().filter(|x| x.valid).collect();
    let decades = (acc[in_win[0]].lambda / acc[*in_win.last().unwrap()].lambda).log10();
    let m_first = r.mods[in_win[0]].norm();
    let m_last = r.mods[*in_win.last().unwrap()].norm();
    let pass = (r.lambda_fit.exponent - p_l).abs() <= 0.05
        && (r.b_fit.exponent - p_b).abs() <= 0.07
        && decades >= 1.0
        && r.mod_slope <= -2.0
        && m_last < m_first;
    verdict(
        8,
        pass,
        format!(
            "λ exponent {:.4} (target {p_l:.4} ± 0.05), b exponent {:.4} (target {p_b:.4} ± 0.07), {decades:.2} decades, |Mod| slope {:.2} (≤ -2), |Mod| {m_first:.2e} → {m_last:.2e}, T̂ = {:.6}, r² = {:.6}, amplitude / 𝒞_λ = {:.3}, {:.0} s",
            r.lambda_fit.exponent, r.b_fit.exponent, r.mod_slope, r.lambda_fit.t_hat, r.lambda_fit.r_squared, r.amplitude_ratio, r.runtime_s
        ),
    );
}

#[test]
fn criterion_09_nls_minus_scenarios() {
    let r = match minus() {
        Ok(r) => r,
        Err(msg) => return verdict(9, false, format!("scenario runs failed: {msg}")),
    };
    let plus_exceeds = r.critical_plus.max_grad_ratio > 10.0;
    verdict(
        9,
        r.bounded && plus_exceeds && r.ceiling_event,
        format!(
            "sign -1 max ‖∇u‖/‖∇u₀‖ = {:.3} over t ≤ {:.2}; sign +1 {:.3} ({:?}); supercritical E = {:.3e}, stop {:?} at t = {:.4}",
            r.critical_minus.max_grad_ratio,
            r.critical_minus.t_final,
            r.critical_plus.max_grad_ratio,
            r.critical_plus.stop,
            r.supercritical_minus.energy0,
            r.supercritical_minus.stop,
            r.supercritical_minus.t_final
        ),
    );
}

fn soliton_error(mesh: &MeshConfig, dt: f64, yoshida: bool) -> f64 {
    let space = SemSpace::new(1, 0.0, mesh).unwrap();
    let u0 = SemFunction::from_sampler(&space, &|r: f64| Complex64::new(q_1d(r), 0.0));
    let cfg = EvolutionConfig {
        sign: 0.0,
        sigma: 0.0,
        dt0: dt,
        adapt: false,
        c_dt: 0.0,
        t_start: 0.0,
        t_end: 1.0,
        checkpoint_every: 1000,
        yoshida,
        floor_h: 0.0,
        grad_ceiling: None,
        grad_q2: 1.0,
        max_steps: 10_000_000,
        keep_states: false,
    };
    let res = run(u0, &cfg, &mut |_| Ok(None)).unwrap();
    let phase = Complex64::from_polar(1.0, 1.0);
    (0..=400).map(|i| i as f64 * 0.02).map(|r| (res.final_state.eval(r) - phase * q_1d(r)).norm()).fold(0.0, f64::max)
}

#[test]
fn criterion_10_integrator_quality() {
    let fine = MeshConfig { degree: 6, h0: 0.05, grading: 1.1, max_element: 0.25, r_max: 20.0 };
    let et: Vec<f64> = [4e-3, 2e-3, 1e-3].iter().map(|&dt| soliton_error(&fine, dt, false)).collect();
    // Linear elements isolate the second-order spatial error.
    let coarse = |h: f64| MeshConfig { degree: 1, h0: h, grading: 1.0, max_element: h, r_max: 20.0 };
    let eh: Vec<f64> = [0.2, 0.1, 0.05].iter().map(|&h| soliton_error(&coarse(h), 1e-3, true)).collect();
    let order = |e: &[f64]| (e[0] / e[1]).log2().min((e[1] / e[2]).log2());
    let (ot, oh) = (order(&et), order(&eh));
    let mut runs: Vec<(String, f64, f64)> = Vec::new();
    match blowup() {
        Ok(r) => runs.push(("minimal".into(), r.max_mass_drift, r.max_energy_drift)),
        Err(msg) => runs.push((format!("minimal failed: {msg}"), f64::INFINITY, f64::INFINITY)),
    }
    match minus() {
        Ok(r) => {
            for s in [&r.critical_minus, &r.critical_plus, &r.supercritical_minus] {
                runs.push((s.label.clone(), s.max_mass_drift, s.max_energy_drift));
            }
        }
        Err(msg) => runs.push((format!("minus failed: {msg}"), f64::INFINITY, f64::INFINITY)),
    }
    let drifts_ok = runs.iter().all(|(_, m, e)| *m < 1e-8 && *e < 1e-6);
    let listing: Vec<String> = runs.iter().map(|(n, m, e)| format!("{n}: mass {m:.1e}, energy {e:.1e}")).collect();
    verdict(
        10,
        drifts_ok && ot >= 1.8 && oh >= 1.8,
        format!(
            "{}; solitary wave dt-order {ot:.2} (errors {:.1e}, {:.1e}, {:.1e}), h-order {oh:.2} (errors {:.1e}, {:.1e}, {:.1e})",
            listing.join("; "),
            et[0],
            et[1],
            et[2],
            eh[0],
            eh[1],
            eh[2]
        ),
    );
}

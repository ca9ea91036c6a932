//! Experiment orchestration: configuration, end-to-end pipelines, rate
//! fitting and reproducible output.

use crate::blowup_law::{predicted_rates, select_initial_params, time_maps, LawConstants};
use crate::error::{invalid, LabError, Result};
use crate::evolve::{run, EvolutionConfig, MeshConfig, RunResult, SemFunction, SemSpace, StopReason, TapView};
use crate::ground_state::{solve_ground_state, GroundStateBundle};
use crate::linops::Linops;
use crate::modulation::{
    coercivity_norm, decompose_with, energy_h, eps_q, fd_weights, mod_vector, DecomposeOptions, ModVector,
};
use crate::profile::{build_expansion, ProfileExpansion, GROUND_STATE_TOL};
use crate::radial_core::RadialGrid;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

/// Environment variable naming the output root.
pub const OUT_ENV: &str = "BLOWUP_LAB_OUT";

/// Flat `key = value` configuration; `#` starts a comment.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Config(pub BTreeMap<String, String>);

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| LabError::Invalid(format!("config line {}: expected key = value", no + 1)))?;
            let k = k.trim();
            if k.is_empty() {
                return invalid(format!("config line {}: empty key", no + 1));
            }
            map.insert(k.to_string(), v.trim().to_string());
        }
        Ok(Config(map))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.0.insert(key.to_string(), value.to_string());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(|s| s.as_str())
    }

    fn parsed<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| LabError::Invalid(format!("config key `{key}`: cannot parse `{v}`"))),
        }
    }

    pub fn f64_or(&self, key: &str, default: f64) -> Result<f64> {
        self.parsed(key, default)
    }
    pub fn usize_or(&self, key: &str, default: usize) -> Result<usize> {
        self.parsed(key, default)
    }
    pub fn bool_or(&self, key: &str, default: bool) -> Result<bool> {
        self.parsed(key, default)
    }

    /// Sorted `key=value` lines; the input to the manifest hash.
    pub fn canonical(&self) -> String {
        self.0.iter().fold(String::new(), |mut s, (k, v)| {
            let _ = writeln!(s, "{k}={v}");
            s
        })
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// Output root: the explicit value, else `$BLOWUP_LAB_OUT`, else `./out`.
pub fn out_root(explicit: Option<&str>) -> PathBuf {
    explicit
        .map(PathBuf::from)
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub name: String,
    pub dim: usize,
    pub sigma: f64,
    pub sign: f64,
    pub e0: f64,
    pub t1: f64,
    pub k: u32,
    pub kprime: u32,
    /// Profile grid spacing and radius.
    pub profile_h: f64,
    pub profile_r: f64,
    pub lambda0: f64,
    pub mesh: MeshConfig,
    pub c_dt: f64,
    /// Resolution scale `h`: runs stop at `λ̃ < 10h`, fits use `λ̃ ≥ 15h`.
    pub floor_h: f64,
    pub yoshida: bool,
    pub checkpoint_every: usize,
    pub t_end: f64,
    pub max_steps: usize,
    pub grad_ceiling: Option<f64>,
    pub decompose_tol: f64,
    pub delta: f64,
    /// Exponent in `S = H/λ^m`.
    pub m: i32,
    pub eps_prime: f64,
    /// Scale of the rescaled-`Q` data for the (NLS-) scenarios.
    pub init_lambda: f64,
    /// Mass surplus `‖u‖₂ - ‖Q‖₂` of the supercritical scenario.
    pub mass_surplus: f64,
    pub super_lambda: f64,
    /// Length of the (NLS-) observation window.
    pub window: f64,
    pub out: PathBuf,
    /// The configuration this spec was built from.
    pub inputs: Config,
}

impl ExperimentSpec {
    pub fn from_config(cfg: &Config) -> Result<Self> {
        let dim = cfg.usize_or("dim", 2)?;
        let mut mesh = MeshConfig::default_for(dim);
        mesh.degree = cfg.usize_or("degree", mesh.degree)?;
        mesh.h0 = cfg.f64_or("h0", mesh.h0)?;
        mesh.grading = cfg.f64_or("grading", mesh.grading)?;
        mesh.max_element = cfg.f64_or("max_element", mesh.max_element)?;
        mesh.r_max = cfg.f64_or("r_max", mesh.r_max)?;
        let name = cfg.get("name").unwrap_or("run").to_string();
        let out = match cfg.get("out") {
            Some(o) => PathBuf::from(o),
            None => out_root(None).join(&name),
        };
        let grad_ceiling = match cfg.get("grad_ceiling") {
            None | Some("none") => None,
            Some(_) => Some(cfg.f64_or("grad_ceiling", 0.0)?),
        };
        let spec = ExperimentSpec {
            name,
            dim,
            sigma: cfg.f64_or("sigma", 0.3)?,
            sign: cfg.f64_or("sign", 1.0)?,
            e0: cfg.f64_or("E0", 1.0)?,
            t1: cfg.f64_or("t1", -0.05)?,
            k: cfg.usize_or("K", 2)? as u32,
            kprime: cfg.usize_or("Kprime", 1)? as u32,
            profile_h: cfg.f64_or("profile_h", 0.01)?,
            profile_r: cfg.f64_or("profile_r", 30.0)?,
            lambda0: cfg.f64_or("lambda0", 0.1)?,
            mesh,
            c_dt: cfg.f64_or("c_dt", 1e-4)?,
            floor_h: cfg.f64_or("floor_h", 1.5e-4)?,
            yoshida: cfg.bool_or("yoshida", true)?,
            checkpoint_every: cfg.usize_or("checkpoint_every", 200)?,
            t_end: cfg.f64_or("t_end", 0.0)?,
            max_steps: cfg.usize_or("max_steps", 20_000_000)?,
            grad_ceiling,
            decompose_tol: cfg.f64_or("decompose_tol", 1e-10)?,
            delta: cfg.f64_or("delta", 0.3)?,
            m: cfg.usize_or("m", 20)? as i32,
            eps_prime: cfg.f64_or("eps_prime", 0.1)?,
            init_lambda: cfg.f64_or("init_lambda", 0.25)?,
            mass_surplus: cfg.f64_or("mass_surplus", 0.5)?,
            super_lambda: cfg.f64_or("super_lambda", 0.25)?,
            window: cfg.f64_or("window", 5.0)?,
            out,
            inputs: cfg.clone(),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=3).contains(&self.dim) {
            return invalid(format!("dim = {} outside 1..=3", self.dim));
        }
        if !(self.sigma > 0.0 && self.sigma <= 0.9 && self.sigma < self.dim as f64 / 2.0) {
            return invalid(format!("sigma = {} outside (0, min(0.9, N/2))", self.sigma));
        }
        if self.sign != 1.0 && self.sign != -1.0 {
            return invalid(format!("sign = {} must be +1 or -1", self.sign));
        }
        if !(self.t1 < 0.0) {
            return invalid("t1 must be negative");
        }
        if !(self.profile_h > 0.0 && self.profile_r >= 12.0) {
            return invalid("profile grid needs h > 0 and radius ≥ 12");
        }
        if !(self.c_dt > 0.0 && self.checkpoint_every > 0 && self.max_steps > 0 && self.floor_h > 0.0) {
            return invalid("c_dt, floor_h, checkpoint_every and max_steps must be positive");
        }
        if !(self.delta > 0.0 && self.decompose_tol > 0.0 && self.eps_prime >= 0.0) {
            return invalid("delta and decompose_tol must be positive");
        }
        if !(self.init_lambda > 0.0 && self.super_lambda > 0.0 && self.window > 0.0 && self.mass_surplus > 0.0) {
            return invalid("scenario scales must be positive");
        }
        self.mesh.validate()
    }

    pub fn profile_grid(&self) -> Result<Arc<RadialGrid>> {
        RadialGrid::new(self.dim, self.profile_h, self.profile_r)
    }

    pub fn ground_state(&self) -> Result<GroundStateBundle> {
        solve_ground_state(&self.profile_grid()?, self.sigma, GROUND_STATE_TOL)
    }

    pub fn expansion(&self) -> Result<ProfileExpansion> {
        let bundle = self.ground_state()?;
        let ops = Arc::new(Linops::new(&bundle)?);
        build_expansion(&bundle, ops, self.sigma, self.k, self.kprime, 1e-4)
    }

    fn evolution(&self, sign: f64, t_start: f64, t_end: f64, grad_q2: f64) -> EvolutionConfig {
        EvolutionConfig {
            sign,
            sigma: self.sigma,
            dt0: self.c_dt,
            adapt: true,
            c_dt: self.c_dt,
            t_start,
            t_end,
            checkpoint_every: self.checkpoint_every,
            yoshida: self.yoshida,
            floor_h: self.floor_h,
            grad_ceiling: self.grad_ceiling,
            grad_q2,
            max_steps: self.max_steps,
            keep_states: false,
        }
    }
}

/// Where the fitted power law is centred in time.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum FitOrigin {
    /// `|t|`, blow-up at `t = 0`.
    Zero,
    /// Blow-up time estimated from the samples: `-1/(d log y/dt)` is linear
    /// in `t` with root at `T̂` for an exact power law.
    Fitted,
    Given(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub exponent: f64,
    pub amplitude: f64,
    pub window: (f64, f64),
    pub r_squared: f64,
    pub predicted_exponent: f64,
    /// Time origin `T̂` of the fit.
    pub t_hat: f64,
    /// Exponent of the plain fit against `|t|` (NaN unless all `t < 0`).
    pub exponent_abs_t: f64,
    pub samples: usize,
}

/// Least squares `y = a + c x`: `(c, a, r²)`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    let c = sxy / sxx;
    let r2 = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
    (c, my - c * mx, r2)
}

/// Power-law fit `y ≈ A (T̂ - t)^p` over samples with `t ∈ window`.
pub fn fit_rate(t: &[f64], y: &[f64], window: (f64, f64), origin: FitOrigin, predicted: f64) -> Result<RateFit> {
    if t.len() != y.len() {
        return invalid("fit_rate: length mismatch");
    }
    let idx: Vec<usize> = (0..t.len()).filter(|&i| t[i] >= window.0 && t[i] <= window.1).collect();
    if idx.len() < 10 {
        return invalid(format!("fit_rate: {} samples in window, need at least 10", idx.len()));
    }
    if idx.iter().any(|&i| !(y[i] > 0.0)) {
        return invalid("fit_rate: nonpositive samples");
    }
    let tw: Vec<f64> = idx.iter().map(|&i| t[i]).collect();
    let ly: Vec<f64> = idx.iter().map(|&i| y[i].ln()).collect();
    let t_hat = match origin {
        FitOrigin::Zero => 0.0,
        FitOrigin::Given(v) => v,
        FitOrigin::Fitted => {
            let n = tw.len();
            let q: Vec<f64> = (0..n)
                .map(|i| {
                    let lo = i.saturating_sub(2).min(n - 5);
                    let w = fd_weights(tw[i], &tw[lo..lo + 5], 1);
                    let d: f64 = w.iter().zip(&ly[lo..lo + 5]).map(|(a, b)| a * b).sum();
                    -1.0 / d
                })
                .collect();
            let (c, a, _) = linear_fit(&tw, &q);
            -a / c
        }
    };
    let tmax = tw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(t_hat > tmax) || !t_hat.is_finite() {
        return Err(LabError::numerical("fit", format!("time origin {t_hat:.6e} not after the window")));
    }
    let lx: Vec<f64> = tw.iter().map(|v| (t_hat - v).ln()).collect();
    let (exponent, a, r_squared) = linear_fit(&lx, &ly);
    let exponent_abs_t = if tmax < 0.0 {
        let la: Vec<f64> = tw.iter().map(|v| (-v).ln()).collect();
        linear_fit(&la, &ly).0
    } else {
        f64::NAN
    };
    Ok(RateFit {
        exponent,
        amplitude: a.exp(),
        window: (tw[0], tmax),
        r_squared,
        predicted_exponent: predicted,
        t_hat,
        exponent_abs_t,
        samples: tw.len(),
    })
}

/// `|y/(C (T̂-t)^p) - 1|` along the samples, and its log-log order in `T̂ - t`.
pub fn correction_series(t: &[f64], y: &[f64], t_hat: f64, c: f64, p: f64) -> (Vec<f64>, f64) {
    let eps: Vec<f64> = t.iter().zip(y).map(|(t, y)| (y / (c * (t_hat - t).powf(p)) - 1.0).abs()).collect();
    let (x, l): (Vec<f64>, Vec<f64>) =
        t.iter().zip(&eps).filter(|(_, e)| **e > 0.0).map(|(t, e)| ((t_hat - t).ln(), e.ln())).unzip();
    let order = if x.len() >= 2 { linear_fit(&x, &l).0 } else { f64::NAN };
    (eps, order)
}

/// One decomposed checkpoint.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModRecord {
    pub t: f64,
    pub lambda: f64,
    pub b: f64,
    pub gamma: f64,
    pub eps_h1: f64,
    pub y_eps: f64,
    pub ortho: [f64; 3],
    pub reconstruction: f64,
    pub h: f64,
    pub s_energy: f64,
    pub coercive_norm: f64,
    pub eps_q: f64,
    pub valid: bool,
}

/// Decomposition tap shared by the pipelines and `decompose-run`.
pub struct Decomposer<'a> {
    pub exp: &'a ProfileExpansion,
    pub opts: DecomposeOptions,
    pub m: i32,
    pub guess: (f64, f64, f64),
    pub records: Vec<ModRecord>,
    pub failures: usize,
}

impl<'a> Decomposer<'a> {
    pub fn new(exp: &'a ProfileExpansion, opts: DecomposeOptions, m: i32, guess: (f64, f64, f64)) -> Self {
        Decomposer { exp, opts, m, guess, records: Vec::new(), failures: 0 }
    }

    /// Decomposes `u` at time `t`; returns the modulated scale when valid.
    pub fn tap(&mut self, t: f64, u: &SemFunction) -> Option<f64> {
        match decompose_with(u, self.guess, self.exp, &self.opts) {
            Ok(st) => {
                let grid = st.eps.grid().clone();
                let y_eps = grid
                    .weights()
                    .iter()
                    .zip(st.eps.values().iter().zip(grid.nodes()))
                    .map(|(w, (v, y))| w * y * y * v.norm_sqr())
                    .sum::<f64>()
                    .sqrt();
                let h = energy_h(&st, self.exp);
                let rec = ModRecord {
                    t,
                    lambda: st.lambda,
                    b: st.b,
                    gamma: st.gamma,
                    eps_h1: st.eps_h1,
                    y_eps,
                    ortho: st.ortho_residuals,
                    reconstruction: st.reconstruction_error,
                    h,
                    s_energy: h / st.lambda.powi(self.m),
                    coercive_norm: coercivity_norm(&st),
                    eps_q: eps_q(&st, self.exp),
                    valid: st.valid,
                };
                self.records.push(rec);
                if st.valid {
                    self.guess = (st.lambda, st.b, st.gamma);
                    Some(st.lambda)
                } else {
                    None
                }
            }
            Err(_) => {
                self.failures += 1;
                None
            }
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BlowupReport {
    pub name: String,
    pub law: LawConstants,
    pub s1: f64,
    pub lambda1: f64,
    pub b1: f64,
    pub stop: StopReason,
    pub steps: usize,
    pub t_final: f64,
    pub max_mass_drift: f64,
    pub max_energy_drift: f64,
    pub decomposition_failures: usize,
    pub accepted: usize,
    pub lambda_fit: RateFit,
    pub b_fit: RateFit,
    pub amplitude_ratio: f64,
    pub lambda_correction_order: f64,
    /// Log-log slope of `|Mod|` against `s` on the fit window.
    pub mod_slope: f64,
    pub mod_irregular: bool,
    pub max_ortho: f64,
    pub max_reconstruction: f64,
    /// Fraction of consecutive accepted samples with `S` nondecreasing.
    pub s_monotone_fraction: f64,
    /// Smallest `H / (‖ε‖²_{H¹} + b²‖|y|ε‖²)` over the window.
    pub coercivity_c1: f64,
    pub runtime_s: f64,
    #[serde(skip)]
    pub records: Vec<ModRecord>,
    #[serde(skip)]
    pub mods: Vec<ModVector>,
}

fn write_rows(path: &Path, header: &[&str], rows: impl Iterator<Item = Vec<f64>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for row in rows {
        w.write_record(row.iter().map(|v| format!("{v:.17e}")))?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `manifest.json` echoing the inputs with their hash and the
/// hashes of the listed outputs.
pub fn write_manifest(dir: &Path, spec: &ExperimentSpec, outputs: &[&str]) -> Result<()> {
    let canon = spec.inputs.canonical();
    let mut files = BTreeMap::new();
    for f in outputs {
        let bytes = std::fs::read(dir.join(f))?;
        files.insert(f.to_string(), sha256_hex(&bytes));
    }
    let m = serde_json::json!({
        "name": spec.name,
        "version": env!("CARGO_PKG_VERSION"),
        "inputs": spec.inputs.0,
        "inputs_sha256": sha256_hex(canon.as_bytes()),
        "spec": spec,
        "outputs": files,
    });
    std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&m)?)?;
    Ok(())
}

fn trajectory_rows(res: &RunResult) -> impl Iterator<Item = Vec<f64>> + '_ {
    res.samples.iter().map(|s| vec![s.t, s.step as f64, s.dt, s.mass2, s.energy, s.grad2, s.lambda])
}

const TRAJ_HEADER: [&str; 7] = ["t", "step", "dt", "mass2", "energy", "grad2", "lambda"];

/// NLS+ from the profile at `(λ₁, b₁)` chosen by the law, with modulation
/// taps, rate fits and reports.
pub fn pipeline_minimal_blowup(spec: &ExperimentSpec) -> Result<BlowupReport> {
    spec.validate()?;
    if spec.sign != 1.0 {
        return invalid("minimal-mass blow-up runs (NLS+): sign must be +1");
    }
    let clock = std::time::Instant::now();
    let exp = spec.expansion()?;
    let lc = LawConstants::from_expansion(&exp, spec.e0, spec.lambda0)?;
    let s1 = time_maps(spec.t1, &lc)?;
    let (lambda1, b1) = select_initial_params(s1, &exp, &lc)?;
    let space = SemSpace::new(spec.dim, spec.sigma, &spec.mesh)?;
    if space.r_max() < lambda1 * exp.grid().r_max() {
        return invalid("evolution mesh too small for the initial profile");
    }
    let u0 = SemFunction::from_profile(&space, &exp.assemble_p(lambda1, b1), lambda1, b1, 0.0);
    let cfg = spec.evolution(1.0, spec.t1, spec.t_end, exp.bundle().grad2);
    let opts = DecomposeOptions { tol: spec.decompose_tol, delta: spec.delta, max_iter: 50 };
    let mut dec = Decomposer::new(&exp, opts, spec.m, (lambda1, b1, 0.0));
    let res = run(u0, &cfg, &mut |v: &TapView| Ok(dec.tap(v.t, v.state)))?;
    let records = std::mem::take(&mut dec.records);
    let failures = dec.failures;
    let acc: Vec<&ModRecord> = records.iter().filter(|r| r.valid).collect();
    if acc.len() < 10 {
        return Err(LabError::numerical("harness", format!("only {} valid decompositions", acc.len())));
    }
    let times: Vec<f64> = acc.iter().map(|r| r.t).collect();
    let states: Vec<(f64, f64, f64)> = acc.iter().map(|r| (r.lambda, r.b, r.gamma)).collect();
    let (mods, irregular) = mod_vector(&times, &states, s1, &exp)?;
    // Fit window: λ̃ ∈ [15h, λ̃(t1)/2].
    let h = spec.floor_h;
    let lam_top = 0.5 * acc[0].lambda;
    let in_win: Vec<usize> =
        (0..acc.len()).filter(|&i| acc[i].lambda >= 15.0 * h && acc[i].lambda <= lam_top).collect();
    if in_win.len() < 10 {
        return Err(LabError::numerical("fit", format!("only {} samples in the fit window", in_win.len())));
    }
    let window = (times[in_win[0]], times[*in_win.last().unwrap()]);
    let lams: Vec<f64> = acc.iter().map(|r| r.lambda).collect();
    let bs: Vec<f64> = acc.iter().map(|r| r.b).collect();
    let lambda_fit = fit_rate(&times, &lams, window, FitOrigin::Fitted, 1.0 / (1.0 + spec.sigma))?;
    let b_fit =
        fit_rate(&times, &bs, window, FitOrigin::Given(lambda_fit.t_hat), (1.0 - spec.sigma) / (1.0 + spec.sigma))?;
    let (tw, lw): (Vec<f64>, Vec<f64>) = in_win.iter().map(|&i| (times[i], lams[i])).unzip();
    let (_, corr_order) = correction_series(&tw, &lw, lambda_fit.t_hat, lc.c_lambda, 2.0 / (4.0 - lc.alpha));
    let (ls, lm): (Vec<f64>, Vec<f64>) =
        in_win.iter().filter(|&&i| mods[i].norm() > 0.0).map(|&i| (mods[i].s.ln(), mods[i].norm().ln())).unzip();
    let mod_slope = if ls.len() >= 2 { linear_fit(&ls, &lm).0 } else { f64::NAN };
    let max_ortho = acc.iter().flat_map(|r| r.ortho.iter().map(|v| v.abs())).fold(0.0, f64::max);
    let max_reconstruction = acc.iter().map(|r| r.reconstruction).fold(0.0, f64::max);
    let pairs = acc.windows(2).count().max(1);
    let s_monotone_fraction = acc.windows(2).filter(|w| w[1].s_energy >= w[0].s_energy).count() as f64 / pairs as f64;
    let coercivity_c1 = in_win
        .iter()
        .filter(|&&i| acc[i].coercive_norm > 0.0)
        .map(|&i| acc[i].h / acc[i].coercive_norm)
        .fold(f64::INFINITY, f64::min);
    let report = BlowupReport {
        name: spec.name.clone(),
        law: lc,
        s1,
        lambda1,
        b1,
        stop: res.stop,
        steps: res.steps,
        t_final: res.samples.last().map(|s| s.t).unwrap_or(spec.t1),
        max_mass_drift: res.max_mass_drift,
        max_energy_drift: res.max_energy_drift,
        decomposition_failures: failures,
        accepted: acc.len(),
        amplitude_ratio: lambda_fit.amplitude / lc.c_lambda,
        lambda_fit,
        b_fit,
        lambda_correction_order: corr_order,
        mod_slope,
        mod_irregular: irregular,
        max_ortho,
        max_reconstruction,
        s_monotone_fraction,
        coercivity_c1,
        runtime_s: clock.elapsed().as_secs_f64(),
        records: records.clone(),
        mods: mods.clone(),
    };
    std::fs::create_dir_all(&spec.out)?;
    write_rows(&spec.out.join("trajectory.csv"), &TRAJ_HEADER, trajectory_rows(&res))?;
    write_rows(
        &spec.out.join("modulation.csv"),
        &[
            "t",
            "s",
            "lambda",
            "b",
            "gamma",
            "eps_h1",
            "y_eps",
            "m1",
            "m2",
            "m3",
            "H",
            "S",
            "ortho1",
            "ortho2",
            "ortho3",
            "eps_q",
            "lambda_pred",
            "b_pred",
        ],
        acc.iter().zip(&mods).map(|(r, m)| {
            let (lp, bp) = predicted_rates(r.t - report.lambda_fit.t_hat, &report.law).unwrap_or((f64::NAN, f64::NAN));
            vec![
                r.t, m.s, r.lambda, r.b, r.gamma, r.eps_h1, r.y_eps, m.m1, m.m2, m.m3, r.h, r.s_energy, r.ortho[0],
                r.ortho[1], r.ortho[2], r.eps_q, lp, bp,
            ]
        }),
    )?;
    std::fs::write(spec.out.join("report.json"), serde_json::to_string_pretty(&report)?)?;
    write_manifest(&spec.out, spec, &["trajectory.csv", "modulation.csv", "report.json"])?;
    Ok(report)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScenarioRun {
    pub label: String,
    pub sign: f64,
    pub mass2: f64,
    pub energy0: f64,
    pub grad0: f64,
    pub max_grad_ratio: f64,
    pub stop: StopReason,
    pub t_final: f64,
    pub max_mass_drift: f64,
    pub max_energy_drift: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MinusReport {
    pub name: String,
    pub critical_minus: ScenarioRun,
    pub critical_plus: ScenarioRun,
    pub supercritical_minus: ScenarioRun,
    /// `max ‖∇u‖/‖∇u₀‖ < 10` for the critical (NLS-) run.
    pub bounded: bool,
    pub sign_flip_larger: bool,
    pub ceiling_event: bool,
}

fn scenario(
    spec: &ExperimentSpec,
    label: &str,
    space: &Arc<SemSpace>,
    u0: SemFunction,
    sign: f64,
    grad_q2: f64,
    ceiling_factor: Option<f64>,
) -> Result<(ScenarioRun, RunResult)> {
    let grad0 = u0.grad2().sqrt();
    let mut cfg = spec.evolution(sign, 0.0, spec.window, grad_q2);
    cfg.grad_ceiling = ceiling_factor.map(|c| c * grad0);
    let _ = space;
    let res = run(u0.clone(), &cfg, &mut |_| Ok(None))?;
    let max_grad = res.samples.iter().map(|s| s.grad2.sqrt()).fold(0.0, f64::max);
    Ok((
        ScenarioRun {
            label: label.to_string(),
            sign,
            mass2: u0.mass2(),
            energy0: u0.energy(sign),
            grad0,
            max_grad_ratio: max_grad / grad0,
            stop: res.stop,
            t_final: res.samples.last().map(|s| s.t).unwrap_or(0.0),
            max_mass_drift: res.max_mass_drift,
            max_energy_drift: res.max_energy_drift,
        },
        res,
    ))
}

/// Critical-mass rescaled `Q` under (NLS-) and (NLS+), and a supercritical
/// negative-energy (NLS-) run that should reach the gradient ceiling.
pub fn pipeline_nls_minus(spec: &ExperimentSpec) -> Result<MinusReport> {
    spec.validate()?;
    if spec.dim < 2 {
        return invalid("the (NLS-) boundedness scenario needs N ≥ 2");
    }
    let bundle = spec.ground_state()?;
    let space = SemSpace::new(spec.dim, spec.sigma, &spec.mesh)?;
    let q = &bundle.q;
    let crit = SemFunction::from_profile(&space, q, spec.init_lambda, 0.0, 0.0);
    let c = (bundle.mass2.sqrt() + spec.mass_surplus) / bundle.mass2.sqrt();
    let sup = SemFunction::from_profile(&space, &q.scale(Complex64::new(c, 0.0)), spec.super_lambda, 0.0, 0.0);
    let gq = bundle.grad2;
    let jobs: Vec<(&str, SemFunction, f64, Option<f64>)> = vec![
        ("critical_minus", crit.clone(), -1.0, None),
        ("critical_plus", crit, 1.0, Some(10.0)),
        ("supercritical_minus", sup, -1.0, Some(10.0)),
    ];
    let runs: Vec<Result<(ScenarioRun, RunResult)>> =
        jobs.into_par_iter().map(|(l, u, s, c)| scenario(spec, l, &space, u, s, gq, c)).collect();
    let mut out = Vec::new();
    std::fs::create_dir_all(&spec.out)?;
    let mut files = Vec::new();
    for r in runs {
        let (sr, res) = r?;
        let f = format!("{}.csv", sr.label);
        write_rows(&spec.out.join(&f), &TRAJ_HEADER, trajectory_rows(&res))?;
        files.push(f);
        out.push(sr);
    }
    let supercritical_minus = out.pop().unwrap();
    let critical_plus = out.pop().unwrap();
    let critical_minus = out.pop().unwrap();
    let report = MinusReport {
        name: spec.name.clone(),
        bounded: critical_minus.max_grad_ratio < 10.0,
        sign_flip_larger: critical_plus.max_grad_ratio > critical_minus.max_grad_ratio,
        ceiling_event: supercritical_minus.stop == StopReason::GradientCeiling,
        critical_minus,
        critical_plus,
        supercritical_minus,
    };
    std::fs::write(spec.out.join("report.json"), serde_json::to_string_pretty(&report)?)?;
    let mut names: Vec<&str> = files.iter().map(|s| s.as_str()).collect();
    names.push("report.json");
    write_manifest(&spec.out, spec, &names)?;
    Ok(report)
}

/// Which data `simulate` starts from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum InitialData {
    /// Profile at the law-selected `(λ₁, b₁)`.
    Profile,
    /// Rescaled ground state.
    Q,
    /// Ground state with a mass surplus.
    Supercritical,
}

impl std::str::FromStr for InitialData {
    type Err = LabError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "profile" => Ok(InitialData::Profile),
            "q" => Ok(InitialData::Q),
            "supercritical" => Ok(InitialData::Supercritical),
            _ => invalid(format!("unknown initial data `{s}` (profile, q, supercritical)")),
        }
    }
}

/// Plain evolution with states saved every `save_every` checkpoints under
/// `out/states/`, for later `decompose-run`.
pub fn simulate(spec: &ExperimentSpec, init: InitialData, save_every: usize) -> Result<RunResult> {
    spec.validate()?;
    let space = SemSpace::new(spec.dim, spec.sigma, &spec.mesh)?;
    let bundle = spec.ground_state()?;
    let (u0, t_start, t_end) = match init {
        InitialData::Profile => {
            let exp = spec.expansion()?;
            let lc = LawConstants::from_expansion(&exp, spec.e0, spec.lambda0)?;
            let s1 = time_maps(spec.t1, &lc)?;
            let (l1, b1) = select_initial_params(s1, &exp, &lc)?;
            (SemFunction::from_profile(&space, &exp.assemble_p(l1, b1), l1, b1, 0.0), spec.t1, spec.t_end)
        }
        InitialData::Q => (SemFunction::from_profile(&space, &bundle.q, spec.init_lambda, 0.0, 0.0), 0.0, spec.window),
        InitialData::Supercritical => {
            let c = (bundle.mass2.sqrt() + spec.mass_surplus) / bundle.mass2.sqrt();
            let q = bundle.q.scale(Complex64::new(c, 0.0));
            (SemFunction::from_profile(&space, &q, spec.super_lambda, 0.0, 0.0), 0.0, spec.window)
        }
    };
    let states = spec.out.join("states");
    std::fs::create_dir_all(&states)?;
    let cfg = spec.evolution(spec.sign, t_start, t_end, bundle.grad2);
    let mut count = 0usize;
    let mut io_err = None;
    let res = run(u0, &cfg, &mut |v: &TapView| {
        if save_every > 0 && count.is_multiple_of(save_every) {
            if let Err(e) = write_state(&states.join(format!("{:07}.csv", v.step)), v.t, v.state) {
                io_err.get_or_insert(e);
            }
        }
        count += 1;
        Ok(None)
    })?;
    if let Some(e) = io_err {
        return Err(e);
    }
    write_rows(&spec.out.join("trajectory.csv"), &TRAJ_HEADER, trajectory_rows(&res))?;
    write_manifest(&spec.out, spec, &["trajectory.csv"])?;
    Ok(res)
}

fn write_state(path: &Path, t: f64, u: &SemFunction) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["t", "re", "im"])?;
    for v in &u.values {
        w.write_record([format!("{t:.17e}"), format!("{:.17e}", v.re), format!("{:.17e}", v.im)])?;
    }
    w.flush()?;
    Ok(())
}

fn read_state(path: &Path, space: &Arc<SemSpace>) -> Result<(f64, SemFunction)> {
    let mut rd = csv::Reader::from_path(path)?;
    let mut t = f64::NAN;
    let mut values = Vec::with_capacity(space.len());
    for rec in rd.deserialize::<(f64, f64, f64)>() {
        let (tt, re, im) = rec?;
        t = tt;
        values.push(Complex64::new(re, im));
    }
    if values.len() != space.len() {
        return Err(LabError::GridMismatch);
    }
    Ok((t, SemFunction { space: space.clone(), values }))
}

/// Decomposes the saved states of a `simulate` run and writes the
/// modulation table.
pub fn decompose_run(traj_dir: &Path, exp: &ProfileExpansion, out_csv: &Path) -> Result<Vec<ModRecord>> {
    let manifest: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(traj_dir.join("manifest.json"))?)?;
    let spec: ExperimentSpec = serde_json::from_value(manifest["spec"].clone())?;
    let space = SemSpace::new(spec.dim, spec.sigma, &spec.mesh)?;
    let mut files: Vec<PathBuf> = std::fs::read_dir(traj_dir.join("states"))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    files.sort();
    if files.is_empty() {
        return invalid("no saved states in the trajectory directory");
    }
    let first = read_state(&files[0], &space)?.1;
    let guess = ((exp.bundle().grad2 / first.grad2()).sqrt(), 0.0, 0.0);
    let opts = DecomposeOptions { tol: spec.decompose_tol, delta: spec.delta, max_iter: 50 };
    let mut dec = Decomposer::new(exp, opts, spec.m, guess);
    for f in &files {
        let (t, u) = read_state(f, &space)?;
        dec.tap(t, &u);
    }
    let recs = dec.records;
    let acc: Vec<&ModRecord> = recs.iter().filter(|r| r.valid).collect();
    let mods = if acc.len() >= 3 {
        let times: Vec<f64> = acc.iter().map(|r| r.t).collect();
        let states: Vec<(f64, f64, f64)> = acc.iter().map(|r| (r.lambda, r.b, r.gamma)).collect();
        let lc = LawConstants::from_expansion(exp, spec.e0, spec.lambda0)?;
        let s0 = if times[0] < 0.0 { time_maps(times[0], &lc)? } else { 0.0 };
        mod_vector(&times, &states, s0, exp)?.0
    } else {
        Vec::new()
    };
    write_rows(
        out_csv,
        &["t", "s", "lambda", "b", "gamma", "eps_h1", "y_eps", "m1", "m2", "m3", "H", "S"],
        acc.iter().zip(mods.iter().map(Some).chain(std::iter::repeat(None))).map(|(r, m)| {
            let (s, m1, m2, m3) =
                m.map(|m| (m.s, m.m1, m.m2, m.m3)).unwrap_or((f64::NAN, f64::NAN, f64::NAN, f64::NAN));
            vec![r.t, s, r.lambda, r.b, r.gamma, r.eps_h1, r.y_eps, m1, m2, m3, r.h, r.s_energy]
        }),
    )?;
    Ok(recs)
}

/// Reads `(t, lambda)` columns from a modulation table.
pub fn read_lambda_table(path: &Path) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let mut rd = csv::Reader::from_path(path)?;
    let headers = rd.headers()?.clone();
    let col = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| LabError::Invalid(format!("column `{name}` missing")))
    };
    let (ct, cl, cb) = (col("t")?, col("lambda")?, col("b")?);
    let (mut t, mut l, mut b) = (Vec::new(), Vec::new(), Vec::new());
    for rec in rd.records() {
        let rec = rec?;
        let get = |i: usize| -> Result<f64> {
            rec[i].parse().map_err(|_| LabError::Invalid(format!("bad number `{}`", &rec[i])))
        };
        t.push(get(ct)?);
        l.push(get(cl)?);
        b.push(get(cb)?);
    }
    Ok((t, l, b))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MatrixEntry {
    pub name: String,
    pub sigma: f64,
    pub e0: f64,
    pub outcome: std::result::Result<BlowupReport, String>,
}

/// Runs the blow-up pipeline over `σ × E₀` in parallel; each entry writes
/// under `root/<name>`.
pub fn run_matrix(base: &Config, sigmas: &[f64], e0s: &[f64], root: &Path) -> Result<Vec<MatrixEntry>> {
    let mut specs = Vec::new();
    for &s in sigmas {
        for &e in e0s {
            let mut c = base.clone();
            let name = format!("sigma{s}_E{e}");
            c.set("sigma", s);
            c.set("E0", e);
            c.set("name", &name);
            c.set("out", root.join(&name).display());
            specs.push((name, s, e, ExperimentSpec::from_config(&c)?));
        }
    }
    let entries: Vec<MatrixEntry> = specs
        .into_par_iter()
        .map(|(name, sigma, e0, spec)| MatrixEntry {
            name,
            sigma,
            e0,
            outcome: pipeline_minimal_blowup(&spec).map_err(|e| e.to_string()),
        })
        .collect();
    std::fs::create_dir_all(root)?;
    std::fs::write(root.join("matrix.json"), serde_json::to_string_pretty(&entries)?)?;
    Ok(entries)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_parsing_and_overrides() {
        let mut c = Config::parse("# comment\nsigma = 0.2\n\nname=abc # trailing\n").unwrap();
        assert_eq!(c.get("sigma"), Some("0.2"));
        assert_eq!(c.get("name"), Some("abc"));
        c.set("sigma", 0.5);
        let s = ExperimentSpec::from_config(&c).unwrap();
        assert_eq!(s.sigma, 0.5);
        assert!(Config::parse("novalue\n").is_err());
        c.set("sigma", "x");
        assert!(ExperimentSpec::from_config(&c).is_err());
        c.set("sigma", 0.95);
        assert!(matches!(ExperimentSpec::from_config(&c), Err(LabError::Invalid(_))));
        assert_eq!(c.canonical().lines().count(), 2);
    }

    #[test]
    fn exact_power_law_with_zero_origin() {
        let sigma: f64 = 0.3;
        let p = 1.0 / (1.0 + sigma);
        let t: Vec<f64> = (0..50).map(|i| -1e-2 * 0.9f64.powi(i)).collect();
        let y: Vec<f64> = t.iter().map(|t| 2.1877 * (-t).powf(p)).collect();
        let f = fit_rate(&t, &y, (-1.0, 0.0), FitOrigin::Zero, p).unwrap();
        assert!((f.exponent - p).abs() < 1e-10);
        assert!((f.amplitude / 2.1877 - 1.0).abs() < 1e-10);
        assert!((f.exponent_abs_t - p).abs() < 1e-10);
    }

    #[test]
    fn one_percent_noise_keeps_exponent_within_a_hundredth() {
        use rand::{Rng, SeedableRng};
        let p = 1.0 / 1.3;
        let mut rng = rand::rngs::StdRng::seed_from_u64(7);
        let t: Vec<f64> = (0..120).map(|i| -1e-1 * 10f64.powf(-2.0 * i as f64 / 119.0)).collect();
        let y: Vec<f64> = t.iter().map(|t| 2.0 * (-t).powf(p) * (1.0 + 0.01 * rng.random_range(-1.0..1.0))).collect();
        let f = fit_rate(&t, &y, (-1.0, 0.0), FitOrigin::Zero, p).unwrap();
        assert!((f.exponent - p).abs() < 0.01, "{}", f.exponent);
    }

    #[test]
    fn fitted_origin_recovers_shifted_blowup_time() {
        let p = 0.7692;
        let tstar = -0.0424;
        let t: Vec<f64> = (0..200).map(|i| tstar - 8e-3 * 0.97f64.powi(i)).collect();
        let y: Vec<f64> = t.iter().map(|t| 1.3 * (tstar - t).powf(p)).collect();
        let f = fit_rate(&t, &y, (-1.0, 0.0), FitOrigin::Fitted, p).unwrap();
        assert!((f.t_hat - tstar).abs() < 1e-9, "{}", f.t_hat);
        assert!((f.exponent - p).abs() < 1e-6);
        assert!(f.r_squared > 0.999_999);
    }

    #[test]
    fn degenerate_windows_are_rejected() {
        let t = [-3.0, -2.0, -1.0];
        let y = [3.0, 2.0, 1.0];
        assert!(fit_rate(&t, &y, (-5.0, 0.0), FitOrigin::Zero, 1.0).is_err());
    }

    #[test]
    fn hashing_is_stable() {
        assert_eq!(sha256_hex(b"abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }
}

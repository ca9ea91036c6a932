//! Radial time integration of `i u_t + Δu + |u|^{4/N} u ± |x|^{-2σ} u = 0`.
//!
//! Space: continuous Gauss–Lobatto–Legendre spectral elements on a graded
//! mesh in a radial variable chosen so the weak form is regular at the
//! origin (`ξ = r²` for `N = 2`, `ξ = r` otherwise, with `v = r u` and a
//! Dirichlet node at the origin for `N = 3`). Mass and singular-potential
//! matrices are lumped; the singular moments of the first element are exact.
//!
//! Time: Strang splitting with an exact nonlinear phase and a
//! Crank–Nicolson linear substep that carries the potential. An optional
//! triple-jump composition lifts the splitting to fourth order.

use crate::banded::{BandLu, BandMatrix};
use crate::error::{invalid, LabError, Result};
use crate::radial_core::{RadialFunction, Sampler};
use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::sync::Arc;

/// Gauss–Lobatto–Legendre nodes, weights and differentiation matrix of degree `p`.
pub fn gll(p: usize) -> (Vec<f64>, Vec<f64>, Vec<Vec<f64>>) {
    assert!(p >= 1);
    let pf = p as f64;
    let legendre = |x: f64| -> (f64, f64) {
        // (P_p(x), P_p'(x))
        let (mut p0, mut p1) = (1.0, x);
        for k in 2..=p {
            let kf = k as f64;
            let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
            p0 = p1;
            p1 = p2;
        }
        let pp = if p == 1 { 1.0 } else { pf * (x * p1 - p0) / (x * x - 1.0) };
        (if p == 1 { x } else { p1 }, pp)
    };
    let mut x = vec![0.0; p + 1];
    x[0] = -1.0;
    x[p] = 1.0;
    for (i, xi) in x.iter_mut().enumerate().take(p).skip(1) {
        let mut z = -(PI * i as f64 / pf).cos();
        for _ in 0..100 {
            let (l, dl) = legendre(z);
            let d2 = (2.0 * z * dl - pf * (pf + 1.0) * l) / (1.0 - z * z);
            let dz = dl / d2;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        *xi = z;
    }
    let pv: Vec<f64> = x.iter().map(|z| legendre(*z).0).collect();
    let w: Vec<f64> = pv.iter().map(|v| 2.0 / (pf * (pf + 1.0) * v * v)).collect();
    let mut d = vec![vec![0.0; p + 1]; p + 1];
    for i in 0..=p {
        for j in 0..=p {
            if i != j {
                d[i][j] = pv[i] / (pv[j] * (x[i] - x[j]));
            }
        }
    }
    d[0][0] = -pf * (pf + 1.0) / 4.0;
    d[p][p] = pf * (pf + 1.0) / 4.0;
    (x, w, d)
}

/// Element layout in the computational variable `ξ`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeshConfig {
    pub degree: usize,
    /// Radial size of the first element (its `ξ`-length is `h0²` when `N = 2`).
    pub h0: f64,
    /// Ratio between consecutive element lengths.
    pub grading: f64,
    /// Cap on the element length in `ξ`.
    pub max_element: f64,
    pub r_max: f64,
}

impl MeshConfig {
    pub fn default_for(dim: usize) -> Self {
        match dim {
            2 => MeshConfig { degree: 6, h0: 1e-4, grading: 1.25, max_element: 0.05, r_max: 4.0 },
            _ => MeshConfig { degree: 6, h0: 1e-4, grading: 1.25, max_element: 0.025, r_max: 4.0 },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=16).contains(&self.degree) {
            return invalid(format!("element degree {} outside 1..=16", self.degree));
        }
        if !(self.h0 > 0.0 && self.grading >= 1.0 && self.max_element > 0.0 && self.r_max > self.h0) {
            return invalid("mesh needs h0 > 0, grading ≥ 1, max_element > 0 and r_max > h0");
        }
        Ok(())
    }
}

/// Discrete spectral-element space with the assembled matrices.
#[derive(Debug)]
pub struct SemSpace {
    dim: usize,
    sigma: f64,
    degree: usize,
    bounds: Vec<f64>,
    /// Radii of all element nodes, including a Dirichlet origin node.
    r_all: Vec<f64>,
    /// 1 when the origin node is removed (`N = 3`).
    off: usize,
    mass: Vec<f64>,
    sing: Vec<f64>,
    stiff: BandMatrix<f64>,
    /// Per-element quadrature weights of the stiffness form, so that
    /// `‖∇u‖²` can be summed from element derivatives without cancellation.
    grad_w: Vec<f64>,
    deriv: Vec<Vec<f64>>,
    ref_nodes: Vec<f64>,
    bary: Vec<f64>,
}

impl SemSpace {
    pub fn new(dim: usize, sigma: f64, mesh: &MeshConfig) -> Result<Arc<Self>> {
        mesh.validate()?;
        if !(1..=3).contains(&dim) {
            return invalid(format!("dimension must be 1, 2 or 3, got {dim}"));
        }
        if !(sigma >= 0.0 && sigma < dim as f64 / 2.0) {
            return invalid(format!("sigma = {sigma} outside [0, N/2)"));
        }
        let p = mesh.degree;
        let (xi_max, a0) = if dim == 2 { (mesh.r_max * mesh.r_max, mesh.h0 * mesh.h0) } else { (mesh.r_max, mesh.h0) };
        let mut bounds = vec![0.0];
        let mut a = a0.min(mesh.max_element);
        while *bounds.last().unwrap() < xi_max {
            let last = *bounds.last().unwrap();
            let mut next = last + a;
            if xi_max - next < 0.5 * a.min(mesh.max_element) {
                next = xi_max;
            }
            bounds.push(next);
            a = (a * mesh.grading).min(mesh.max_element);
        }
        let (x, w, d) = gll(p);
        let ne = bounds.len() - 1;
        let n_all = ne * p + 1;
        let (dens, q_exp) = match dim {
            1 => (2.0, -2.0 * sigma),
            2 => (PI, -sigma),
            _ => (4.0 * PI, -2.0 * sigma),
        };
        let stiff_dens = |xi: f64| match dim {
            1 => 2.0,
            2 => 4.0 * PI * xi,
            _ => 4.0 * PI,
        };
        let mut xi_all = vec![0.0; n_all];
        let mut mass = vec![0.0; n_all];
        let mut sing = vec![0.0; n_all];
        let mut stiff = BandMatrix::zeros(n_all, p, p);
        let mut grad_w = Vec::with_capacity(ne * (p + 1));
        for e in 0..ne {
            let (lo, hi) = (bounds[e], bounds[e + 1]);
            let jac = 0.5 * (hi - lo);
            let base = e * p;
            let xe: Vec<f64> = x.iter().map(|t| lo + (t + 1.0) * jac).collect();
            xi_all[base..=base + p].copy_from_slice(&xe);
            for i in 0..=p {
                mass[base + i] += dens * w[i] * jac;
            }
            if e == 0 {
                // Exact ∫_0^hi ξ^q φ_i dξ from the monomial expansion of φ_i.
                let v = DMatrix::from_fn(p + 1, p + 1, |i, m| (xe[i] / hi).powi(m as i32));
                let c = v.try_inverse().ok_or_else(|| LabError::numerical("evolve", "singular Vandermonde"))?;
                for i in 0..=p {
                    let mut acc = 0.0;
                    for m in 0..=p {
                        acc += c[(m, i)] * hi.powf(q_exp + 1.0) / (m as f64 + q_exp + 1.0);
                    }
                    sing[base + i] += dens * acc;
                }
            } else {
                for i in 0..=p {
                    sing[base + i] += dens * w[i] * jac * xe[i].powf(q_exp);
                }
            }
            grad_w.extend((0..=p).map(|qn| w[qn] * stiff_dens(xe[qn]) / jac));
            for i in 0..=p {
                for j in 0..=p {
                    let mut acc = 0.0;
                    for qn in 0..=p {
                        acc += w[qn] * jac * stiff_dens(xe[qn]) * d[qn][i] * d[qn][j];
                    }
                    stiff.add(base + i, base + j, acc / (jac * jac));
                }
            }
        }
        let r_all: Vec<f64> = xi_all.iter().map(|xi| if dim == 2 { xi.sqrt() } else { *xi }).collect();
        let off = usize::from(dim == 3);
        let (mass, sing, stiff) = if off == 1 {
            let n = n_all - 1;
            let mut k = BandMatrix::zeros(n, p, p);
            for i in 0..n {
                for j in i.saturating_sub(p)..(i + p + 1).min(n) {
                    k.set(i, j, stiff.get(i + 1, j + 1));
                }
            }
            (mass[1..].to_vec(), sing[1..].to_vec(), k)
        } else {
            (mass, sing, stiff)
        };
        let bary: Vec<f64> =
            (0..=p).map(|j| 1.0 / (0..=p).filter(|k| *k != j).map(|k| x[j] - x[k]).product::<f64>()).collect();
        Ok(Arc::new(SemSpace {
            dim,
            sigma,
            degree: p,
            bounds,
            r_all,
            off,
            mass,
            sing,
            stiff,
            grad_w,
            deriv: d,
            ref_nodes: x,
            bary,
        }))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn sigma(&self) -> f64 {
        self.sigma
    }
    pub fn degree(&self) -> usize {
        self.degree
    }
    pub fn elements(&self) -> usize {
        self.bounds.len() - 1
    }
    /// Number of unknowns.
    pub fn len(&self) -> usize {
        self.mass.len()
    }
    pub fn is_empty(&self) -> bool {
        self.mass.is_empty()
    }
    /// Radii of the unknowns.
    pub fn radii(&self) -> &[f64] {
        &self.r_all[self.off..]
    }
    pub fn r_max(&self) -> f64 {
        *self.r_all.last().unwrap()
    }
    /// Smallest radial node spacing.
    pub fn min_spacing(&self) -> f64 {
        self.r_all.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min)
    }
    pub fn mass_weights(&self) -> &[f64] {
        &self.mass
    }
    pub fn singular_weights(&self) -> &[f64] {
        &self.sing
    }
    pub fn stiffness(&self) -> &BandMatrix<f64> {
        &self.stiff
    }

    /// Coefficients of `u(r)`.
    pub fn project(&self, f: &impl Sampler) -> Vec<Complex64> {
        self.radii().iter().map(|r| if self.dim == 3 { f.sample_at(*r) * *r } else { f.sample_at(*r) }).collect()
    }

    /// Node values of `u` (as opposed to `v = r u` when `N = 3`).
    pub fn u_values(&self, v: &[Complex64]) -> Vec<Complex64> {
        if self.dim == 3 {
            v.iter().zip(self.radii()).map(|(a, r)| a / r).collect()
        } else {
            v.to_vec()
        }
    }

    /// `u(r)` from the element interpolant; zero beyond the outer boundary.
    pub fn eval(&self, v: &[Complex64], r: f64) -> Complex64 {
        let r = r.abs();
        if r > self.r_max() {
            return Complex64::default();
        }
        let xi = if self.dim == 2 { r * r } else { r };
        let e = match self.bounds.binary_search_by(|b| b.partial_cmp(&xi).unwrap()) {
            Ok(i) => i.min(self.elements() - 1),
            Err(i) => i.saturating_sub(1).min(self.elements() - 1),
        };
        let (lo, hi) = (self.bounds[e], self.bounds[e + 1]);
        let t = 2.0 * (xi - lo) / (hi - lo) - 1.0;
        let base = e * self.degree;
        let coef = |k: usize| -> Complex64 {
            let g = base + k;
            if g < self.off {
                Complex64::default()
            } else {
                v[g - self.off]
            }
        };
        let mut num = Complex64::default();
        let mut den = 0.0;
        for (k, (xk, wk)) in self.ref_nodes.iter().zip(&self.bary).enumerate() {
            let dx = t - xk;
            if dx == 0.0 {
                return self.finish(coef(k), r);
            }
            let c = wk / dx;
            num += coef(k) * c;
            den += c;
        }
        self.finish(num / den, r)
    }

    fn finish(&self, v: Complex64, r: f64) -> Complex64 {
        if self.dim == 3 {
            if r > 0.0 {
                v / r
            } else {
                Complex64::default()
            }
        } else {
            v
        }
    }

    pub fn mass2(&self, v: &[Complex64]) -> f64 {
        v.iter().zip(&self.mass).map(|(a, m)| m * a.norm_sqr()).sum()
    }

    pub fn grad2(&self, v: &[Complex64]) -> f64 {
        let p = self.degree;
        let at = |k: usize| if k < self.off { Complex64::default() } else { v[k - self.off] };
        let mut total = 0.0;
        for (e, gw) in self.grad_w.chunks(p + 1).enumerate() {
            let base = e * p;
            for (qn, w) in gw.iter().enumerate() {
                let du: Complex64 = self.deriv[qn].iter().enumerate().map(|(j, d)| d * at(base + j)).sum();
                total += w * du.norm_sqr();
            }
        }
        total
    }

    /// `∫ |x|^{-2σ} |u|²`.
    pub fn singular2(&self, v: &[Complex64]) -> f64 {
        v.iter().zip(&self.sing).map(|(a, m)| m * a.norm_sqr()).sum()
    }

    /// `∫ |u|^{q}`.
    pub fn lp(&self, v: &[Complex64], q: f64) -> f64 {
        let u = self.u_values(v);
        let r = self.radii();
        u.iter()
            .enumerate()
            .map(|(i, a)| {
                let w = if self.dim == 3 { self.mass[i] * r[i] * r[i] } else { self.mass[i] };
                w * a.norm().powf(q)
            })
            .sum()
    }

    /// `½‖∇u‖² - ∫|u|^{p+2}/(p+2) - (sign/2) ∫|x|^{-2σ}|u|²`, `p = 4/N`.
    pub fn energy(&self, v: &[Complex64], sign: f64) -> f64 {
        let p = 4.0 / self.dim as f64;
        let pot = if sign != 0.0 { 0.5 * sign * self.singular2(v) } else { 0.0 };
        0.5 * self.grad2(v) - self.lp(v, p + 2.0) / (p + 2.0) - pot
    }
}

/// State on a spectral-element space.
#[derive(Clone, Debug)]
pub struct SemFunction {
    pub space: Arc<SemSpace>,
    pub values: Vec<Complex64>,
}

impl SemFunction {
    pub fn from_sampler(space: &Arc<SemSpace>, f: &impl Sampler) -> Self {
        SemFunction { space: space.clone(), values: space.project(f) }
    }

    /// `λ^{-N/2} f(x/λ) e^{-ib|x|²/(4λ²) + iγ}`.
    pub fn from_profile(space: &Arc<SemSpace>, f: &RadialFunction, lambda: f64, b: f64, gamma: f64) -> Self {
        let n = space.dim() as f64;
        let g = |r: f64| {
            let y = r / lambda;
            f.sample(y) * lambda.powf(-n / 2.0) * Complex64::from_polar(1.0, -b * y * y / 4.0 + gamma)
        };
        Self::from_sampler(space, &g)
    }

    pub fn eval(&self, r: f64) -> Complex64 {
        self.space.eval(&self.values, r)
    }
    pub fn mass2(&self) -> f64 {
        self.space.mass2(&self.values)
    }
    pub fn grad2(&self) -> f64 {
        self.space.grad2(&self.values)
    }
    pub fn energy(&self, sign: f64) -> f64 {
        self.space.energy(&self.values, sign)
    }
}

impl Sampler for SemFunction {
    fn sample_at(&self, r: f64) -> Complex64 {
        self.eval(r)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvolutionConfig {
    /// `+1` or `-1` selects (NLS±); `0` drops the potential.
    pub sign: f64,
    pub sigma: f64,
    pub dt0: f64,
    pub adapt: bool,
    /// `dt = c_dt λ̃²` when `adapt` is set.
    pub c_dt: f64,
    pub t_start: f64,
    pub t_end: f64,
    pub checkpoint_every: usize,
    /// Fourth-order triple-jump composition of the Strang step.
    pub yoshida: bool,
    /// Resolution scale `h`: the run stops once `λ̃ < 10 h`.
    pub floor_h: f64,
    /// Numerical blow-up is declared when `‖∇u‖₂` exceeds this.
    pub grad_ceiling: Option<f64>,
    /// `‖∇Q‖₂²`, for the gradient-based scale `λ̃ = ‖∇Q‖₂/‖∇u‖₂`.
    pub grad_q2: f64,
    pub max_steps: usize,
    /// Keep the state in every sample.
    pub keep_states: bool,
}

impl EvolutionConfig {
    pub fn validate(&self) -> Result<()> {
        if ![-1.0, 0.0, 1.0].contains(&self.sign) {
            return invalid(format!("sign must be -1, 0 or +1, got {}", self.sign));
        }
        if !(self.sigma >= 0.0 && self.sigma <= 0.9) {
            return invalid(format!("sigma = {} outside [0, 0.9]", self.sigma));
        }
        if !(self.dt0 > 0.0) || (self.adapt && !(self.c_dt > 0.0)) {
            return invalid("time step constants must be positive");
        }
        if !(self.t_start < self.t_end) {
            return invalid("t_start must precede t_end");
        }
        if self.checkpoint_every == 0 || self.max_steps == 0 {
            return invalid("checkpoint_every and max_steps must be positive");
        }
        if !(self.grad_q2 > 0.0) {
            return invalid("grad_q2 must be positive");
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct TrajectorySample {
    pub t: f64,
    pub step: usize,
    pub dt: f64,
    pub u: Option<SemFunction>,
    pub mass2: f64,
    pub energy: f64,
    pub grad2: f64,
    /// Scale used for step control: from the tap when it supplies one,
    /// otherwise from the gradient.
    pub lambda: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopReason {
    EndTime,
    ResolutionFloor,
    GradientCeiling,
    MaxSteps,
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub samples: Vec<TrajectorySample>,
    pub stop: StopReason,
    pub steps: usize,
    pub final_state: SemFunction,
    pub max_mass_drift: f64,
    pub max_energy_drift: f64,
}

/// Linear Crank–Nicolson propagators, cached per step size.
pub struct Stepper {
    space: Arc<SemSpace>,
    sign: f64,
    cache: Vec<(f64, BandLu<Complex64>, BandMatrix<Complex64>)>,
}

impl Stepper {
    pub fn new(space: &Arc<SemSpace>, sign: f64) -> Self {
        Stepper { space: space.clone(), sign, cache: Vec::new() }
    }

    fn propagator(&mut self, dt: f64) -> Result<usize> {
        if let Some(i) = self.cache.iter().position(|(d, _, _)| *d == dt) {
            return Ok(i);
        }
        let s = &self.space;
        let n = s.len();
        let p = s.degree;
        let mut a = BandMatrix::zeros(n, p, p);
        let mut b = BandMatrix::zeros(n, p, p);
        let half = Complex64::new(0.0, 0.5 * dt);
        for i in 0..n {
            for j in i.saturating_sub(p)..(i + p + 1).min(n) {
                let mut h = s.stiff.get(i, j);
                if i == j {
                    h -= self.sign * s.sing[i];
                }
                let m = if i == j { s.mass[i] } else { 0.0 };
                a.set(i, j, half * h + m);
                b.set(i, j, -half * h + m);
            }
        }
        let lu = a.factor();
        if !(lu.min_pivot_ratio() > 1e-14) {
            return Err(LabError::numerical("evolve", "Crank–Nicolson matrix is singular"));
        }
        if self.cache.len() >= 4 {
            self.cache.remove(0);
        }
        self.cache.push((dt, lu, b));
        Ok(self.cache.len() - 1)
    }

    /// One Crank–Nicolson step of `i u_t = H u`.
    pub fn linear(&mut self, v: &[Complex64], dt: f64) -> Result<Vec<Complex64>> {
        let i = self.propagator(dt)?;
        let (_, lu, b) = &self.cache[i];
        Ok(lu.solve(&b.matvec(v)))
    }

    /// Exact flow of `i u_t = -|u|^{4/N} u`.
    pub fn phase(&self, v: &mut [Complex64], dt: f64) -> Result<()> {
        let p = 2.0 / self.space.dim as f64;
        let r = self.space.radii();
        let mut worst: f64 = 0.0;
        for (i, z) in v.iter_mut().enumerate() {
            let a2 = if self.space.dim == 3 { z.norm_sqr() / (r[i] * r[i]) } else { z.norm_sqr() };
            let rot = if p == 1.0 { dt * a2 } else { dt * a2.powf(p) };
            worst = worst.max(rot.abs());
            *z *= Complex64::from_polar(1.0, rot);
        }
        if !(worst < PI / 4.0) {
            return Err(LabError::numerical("evolve", format!("nonlinear phase rotation {worst:.3} per substep")));
        }
        Ok(())
    }

    pub fn strang(&mut self, v: &[Complex64], dt: f64) -> Result<Vec<Complex64>> {
        let mut w = v.to_vec();
        self.phase(&mut w, 0.5 * dt)?;
        let mut w = self.linear(&w, dt)?;
        self.phase(&mut w, 0.5 * dt)?;
        if w.iter().any(|z| !z.is_finite()) {
            return Err(LabError::numerical("evolve", "non-finite state"));
        }
        Ok(w)
    }

    pub fn yoshida(&mut self, v: &[Complex64], dt: f64) -> Result<Vec<Complex64>> {
        let w1 = 1.0 / (2.0 - 2f64.powf(1.0 / 3.0));
        let w0 = 1.0 - 2.0 * w1;
        // Three Strang steps with the adjacent half-phases merged; the phase
        // flow preserves |u|, so consecutive phase steps add exactly.
        let mut w = v.to_vec();
        self.phase(&mut w, 0.5 * w1 * dt)?;
        let mut w = self.linear(&w, w1 * dt)?;
        self.phase(&mut w, 0.5 * (w1 + w0) * dt)?;
        let mut w = self.linear(&w, w0 * dt)?;
        self.phase(&mut w, 0.5 * (w0 + w1) * dt)?;
        let mut w = self.linear(&w, w1 * dt)?;
        self.phase(&mut w, 0.5 * w1 * dt)?;
        if w.iter().any(|z| !z.is_finite()) {
            return Err(LabError::numerical("evolve", "non-finite state"));
        }
        Ok(w)
    }
}

/// One step of the configured scheme.
pub fn step(u: &SemFunction, dt: f64, cfg: &EvolutionConfig, stepper: &mut Stepper) -> Result<SemFunction> {
    let values = if cfg.yoshida { stepper.yoshida(&u.values, dt)? } else { stepper.strang(&u.values, dt)? };
    Ok(SemFunction { space: u.space.clone(), values })
}

/// What a tap sees at a checkpoint.
pub struct TapView<'a> {
    pub t: f64,
    pub step: usize,
    pub state: &'a SemFunction,
    pub grad2: f64,
}

/// Integrates from `cfg.t_start`. The tap runs at every checkpoint and may
/// return a scale `λ̃` that replaces the gradient-based one for step control
/// and the resolution floor.
pub fn run(
    u0: SemFunction,
    cfg: &EvolutionConfig,
    tap: &mut dyn FnMut(&TapView) -> Result<Option<f64>>,
) -> Result<RunResult> {
    cfg.validate()?;
    if u0.space.sigma != cfg.sigma {
        return invalid("space and config disagree on sigma");
    }
    let mut stepper = Stepper::new(&u0.space, cfg.sign);
    let m0 = u0.mass2();
    let e0 = u0.energy(cfg.sign);
    let mut u = u0;
    let mut t = cfg.t_start;
    let mut steps = 0usize;
    let mut samples = Vec::new();
    let mut dt = cfg.dt0;
    let mut max_mass_drift: f64 = 0.0;
    let mut max_energy_drift: f64 = 0.0;
    let stop;
    loop {
        let at_end = t >= cfg.t_end - 1e-14 * cfg.t_end.abs().max(1.0);
        if steps.is_multiple_of(cfg.checkpoint_every) || at_end || steps >= cfg.max_steps {
            let grad2 = u.grad2();
            let mass2 = u.mass2();
            let energy = u.energy(cfg.sign);
            max_mass_drift = max_mass_drift.max((mass2 - m0).abs() / m0.max(f64::MIN_POSITIVE));
            max_energy_drift = max_energy_drift.max((energy - e0).abs() / e0.abs().max(f64::MIN_POSITIVE));
            let lam_tap = tap(&TapView { t, step: steps, state: &u, grad2 })?;
            let lambda = lam_tap.unwrap_or_else(|| (cfg.grad_q2 / grad2).sqrt());
            if cfg.adapt {
                dt = cfg.c_dt * lambda * lambda;
            }
            samples.push(TrajectorySample {
                t,
                step: steps,
                dt,
                u: cfg.keep_states.then(|| u.clone()),
                mass2,
                energy,
                grad2,
                lambda,
            });
            if at_end {
                stop = StopReason::EndTime;
                break;
            }
            if lambda < 10.0 * cfg.floor_h {
                stop = StopReason::ResolutionFloor;
                break;
            }
            if cfg.grad_ceiling.is_some_and(|c| grad2.sqrt() > c) {
                stop = StopReason::GradientCeiling;
                break;
            }
            if steps >= cfg.max_steps {
                stop = StopReason::MaxSteps;
                break;
            }
        }
        let mut h = dt.min(cfg.t_end - t);
        let mut attempt = 0;
        let next = loop {
            match step(&u, h, cfg, &mut stepper) {
                Ok(v) => break v,
                Err(e) if attempt < 5 => {
                    let _ = e;
                    attempt += 1;
                    h *= 0.5;
                }
                Err(e) => return Err(LabError::numerical("evolve", format!("step failed after 5 halvings: {e}"))),
            }
        };
        if attempt > 0 {
            dt = h;
        }
        u = next;
        t += h;
        steps += 1;
    }
    Ok(RunResult { samples, stop, steps, final_state: u, max_mass_drift, max_energy_drift })
}

/// `Q(x) = (3 sech²(2x))^{1/4}`, the one-dimensional ground state.
pub fn q_1d(x: f64) -> f64 {
    (3.0 / (2.0 * x).cosh().powi(2)).powf(0.25)
}

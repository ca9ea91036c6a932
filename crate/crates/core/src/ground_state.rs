//! Ground state `Q` of `-ΔQ + Q - Q^{1+4/N} = 0`: shooting for a global
//! bracket on `Q(0)`, then Newton on the discrete boundary value problem.

use crate::banded::BandMatrix;
use crate::error::{invalid, LabError, Result};
use crate::radial_core::{norm, NormKind, RadialFunction, RadialGrid};
use nalgebra::{Matrix3, Vector3};
use std::sync::Arc;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Shot {
    /// The trajectory crossed zero: `Q(0)` too large.
    Over,
    /// The trajectory turned back up while positive: `Q(0)` too small.
    Under,
}

fn rhs(dim: usize, p: f64, r: f64, q: f64, dq: f64) -> f64 {
    let drift = if dim > 1 { (dim as f64 - 1.0) / r * dq } else { 0.0 };
    q - q.abs().powf(p) * q - drift
}

/// Integrates the radial ODE from the origin with RK4 and classifies the
/// far-field behavior. Returns the classification and the radius at which it
/// was decided; `None` if neither happened before `r_end`.
pub fn shoot(dim: usize, q0: f64, r_end: f64, dr: f64) -> Option<(Shot, f64)> {
    let p = 4.0 / dim as f64;
    let a = (q0 - q0.powf(1.0 + p)) / dim as f64;
    let mut r = dr;
    let mut q = q0 + 0.5 * a * dr * dr;
    let mut dq = a * dr;
    while r < r_end {
        let f = |r: f64, q: f64, dq: f64| (dq, rhs(dim, p, r, q, dq));
        let (k1q, k1p) = f(r, q, dq);
        let (k2q, k2p) = f(r + dr / 2.0, q + dr / 2.0 * k1q, dq + dr / 2.0 * k1p);
        let (k3q, k3p) = f(r + dr / 2.0, q + dr / 2.0 * k2q, dq + dr / 2.0 * k2p);
        let (k4q, k4p) = f(r + dr, q + dr * k3q, dq + dr * k3p);
        q += dr / 6.0 * (k1q + 2.0 * k2q + 2.0 * k3q + k4q);
        dq += dr / 6.0 * (k1p + 2.0 * k2p + 2.0 * k3p + k4p);
        r += dr;
        if q < 0.0 {
            return Some((Shot::Over, r));
        }
        if dq > 0.0 {
            return Some((Shot::Under, r));
        }
    }
    None
}

/// Scans `Q(0)` over `[lo, hi]` and returns the bracketing pairs where the
/// classification flips from `Under` to `Over`.
pub fn scan_brackets(dim: usize, lo: f64, hi: f64, n: usize) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    let mut prev: Option<(f64, Shot)> = None;
    for i in 0..=n {
        let q0 = lo + (hi - lo) * i as f64 / n as f64;
        let Some((shot, _)) = shoot(dim, q0, 40.0, 1e-3) else { continue };
        if let Some((pq, ps)) = prev {
            if ps == Shot::Under && shot == Shot::Over {
                out.push((pq, q0));
            }
        }
        prev = Some((q0, shot));
    }
    out
}

/// Bisection on `Q(0)` to relative width `1e-12`.
pub fn shooting_q0(dim: usize) -> Result<f64> {
    let brackets = scan_brackets(dim, 1.0, 6.0, 250);
    let &(mut lo, mut hi) =
        brackets.first().ok_or_else(|| LabError::numerical("ground_state", "no shooting bracket for Q(0)"))?;
    while hi - lo > 1e-12 * hi {
        let mid = 0.5 * (lo + hi);
        match shoot(dim, mid, 40.0, 1e-3) {
            Some((Shot::Over, _)) => hi = mid,
            Some((Shot::Under, _)) => lo = mid,
            None => break,
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Shooting profile sampled at the grid nodes, continued by the decaying
/// asymptotic tail once the trajectory stops being trustworthy.
fn initial_guess(grid: &RadialGrid, q0: f64) -> Vec<f64> {
    let dim = grid.dim();
    let p = 4.0 / dim as f64;
    let h = grid.h();
    let sub = 8;
    let dr = h / sub as f64;
    let a = (q0 - q0.powf(1.0 + p)) / dim as f64;
    let mut out = Vec::with_capacity(grid.len());
    let (mut r, mut q, mut dq) = (h / 2.0, q0 + a * h * h / 8.0, a * h / 2.0);
    let mut tail: Option<(f64, f64)> = None;
    for &node in grid.nodes() {
        if let Some((rc, qc)) = tail {
            let decay = (rc / node).powf((dim as f64 - 1.0) / 2.0) * (-(node - rc)).exp();
            out.push(qc * decay);
            continue;
        }
        while r < node - 1e-12 {
            let f = |r: f64, q: f64, dq: f64| (dq, rhs(dim, p, r, q, dq));
            let (k1q, k1p) = f(r, q, dq);
            let (k2q, k2p) = f(r + dr / 2.0, q + dr / 2.0 * k1q, dq + dr / 2.0 * k1p);
            let (k3q, k3p) = f(r + dr / 2.0, q + dr / 2.0 * k2q, dq + dr / 2.0 * k2p);
            let (k4q, k4p) = f(r + dr, q + dr * k3q, dq + dr * k3p);
            q += dr / 6.0 * (k1q + 2.0 * k2q + 2.0 * k3q + k4q);
            dq += dr / 6.0 * (k1p + 2.0 * k2p + 2.0 * k3p + k4p);
            r += dr;
        }
        if q < 1e-4 * q0 || dq > 0.0 {
            tail = Some((node, q.max(1e-4 * q0)));
            out.push(q.max(1e-4 * q0));
        } else {
            out.push(q);
        }
    }
    out
}

/// Residual `-ΔQ + Q - |Q|^p Q` on the grid.
pub fn el_residual(grid: &RadialGrid, q: &[f64]) -> Vec<f64> {
    let p = 4.0 / grid.dim() as f64;
    let lap = grid.apply_laplacian(q);
    q.iter().zip(&lap).map(|(v, l)| -l + v - v.abs().powf(p) * v).collect()
}

fn newton(grid: &RadialGrid, mut q: Vec<f64>) -> Result<Vec<f64>> {
    let p = 4.0 / grid.dim() as f64;
    let a = grid.laplacian_band();
    let mut polished = false;
    for _ in 0..60 {
        let f = el_residual(grid, &q);
        let mut j = BandMatrix::zeros(q.len(), 2, 2);
        for i in 0..q.len() {
            for c in i.saturating_sub(2)..(i + 3).min(q.len()) {
                let mut v = -a.get(i, c);
                if c == i {
                    v += 1.0 - (1.0 + p) * q[i].abs().powf(p);
                }
                j.set(i, c, v);
            }
        }
        let d = j.factor().solve(&f);
        let mut step: f64 = 0.0;
        for (qi, di) in q.iter_mut().zip(&d) {
            *qi -= di;
            step = step.max(di.abs());
        }
        if !step.is_finite() {
            return Err(LabError::numerical("ground_state", "Newton iteration diverged"));
        }
        // Steps stall at roundoff; take one more after reaching it.
        if polished {
            return Ok(q);
        }
        polished = step < 1e-12 * q[0].abs();
    }
    Err(LabError::numerical("ground_state", "Newton iteration did not converge in 60 steps"))
}

/// Value at the origin from the even quartic through the first three nodes.
pub fn origin_value(grid: &RadialGrid, u: &[f64]) -> f64 {
    let r = grid.nodes();
    let v = Matrix3::from_fn(|i, j| r[i].powi(2 * j as i32));
    let c = v.lu().solve(&Vector3::new(u[0], u[1], u[2])).expect("distinct nodes");
    c[0]
}

#[derive(Clone, Debug)]
pub struct GroundStateBundle {
    pub q: RadialFunction,
    /// Real node values of `Q`.
    pub qv: Vec<f64>,
    pub sigma: f64,
    pub q0: f64,
    pub mass2: f64,
    pub grad2: f64,
    pub virial2: f64,
    pub virial4: f64,
    pub inv_sigma2: f64,
    pub gn_check: f64,
    /// `‖-ΔQ + Q - Q^{1+4/N}‖₂` on the grid.
    pub residual: f64,
    /// Discrete value of the critical energy at `Q` (zero in the continuum).
    pub energy_crit: f64,
}

impl GroundStateBundle {
    pub fn grid(&self) -> &Arc<RadialGrid> {
        self.q.grid()
    }
    pub fn dim(&self) -> usize {
        self.grid().dim()
    }

    /// `‖|y|^{-σ} Q‖₂²` for another exponent.
    pub fn inv_sigma_norm2(&self, sigma: f64) -> Result<f64> {
        Ok(norm(&self.q, NormKind::Weighted(-sigma))?.powi(2))
    }
}

/// Solves for the ground state on `grid`; `tol` bounds the discrete residual.
pub fn solve_ground_state(grid: &Arc<RadialGrid>, sigma: f64, tol: f64) -> Result<GroundStateBundle> {
    let dim = grid.dim();
    if 2.0 * sigma >= dim as f64 || sigma < 0.0 {
        return invalid(format!("sigma = {sigma} outside [0, N/2)"));
    }
    if grid.r_max() < 12.0 {
        return invalid("r_max below 12 cannot hold the ground state tail");
    }
    let q0 = shooting_q0(dim)?;
    let q = newton(grid, initial_guess(grid, q0))?;
    let res = el_residual(grid, &q);
    let residual = grid.dot(&res, &res).sqrt();
    if !(residual < tol) {
        return Err(LabError::numerical("ground_state", format!("residual {residual:.3e} above tolerance {tol:.1e}")));
    }
    if q.last().copied().unwrap_or(0.0).abs() > 1e-10 || q.iter().any(|v| *v < -1e-14) {
        return Err(LabError::numerical("ground_state", "ground state is not positive and decayed at r_max"));
    }
    bundle_from(grid, q, sigma)
}

fn bundle_from(grid: &Arc<RadialGrid>, qv: Vec<f64>, sigma: f64) -> Result<GroundStateBundle> {
    let q = RadialFunction::from_real(grid, &qv);
    let res = el_residual(grid, &qv);
    let mass2 = norm(&q, NormKind::L2)?.powi(2);
    let grad2 = norm(&q, NormKind::GradL2)?.powi(2);
    let virial2 = norm(&q, NormKind::Weighted(1.0))?.powi(2);
    let virial4 = norm(&q, NormKind::Weighted(2.0))?.powi(2);
    let inv_sigma2 = norm(&q, NormKind::Weighted(-sigma))?.powi(2);
    let mut b = GroundStateBundle {
        q0: origin_value(grid, &qv),
        qv,
        sigma,
        mass2,
        grad2,
        virial2,
        virial4,
        inv_sigma2,
        gn_check: 0.0,
        residual: grid.dot(&res, &res).sqrt(),
        energy_crit: 0.0,
        q: q.clone(),
    };
    b.gn_check = gagliardo_nirenberg_ratio(&q, &b)?;
    b.energy_crit = energy_crit(&q)?;
    Ok(b)
}

fn lp_power(u: &RadialFunction, e: f64) -> f64 {
    let f: Vec<f64> = u.values().iter().map(|v| v.norm().powf(e)).collect();
    u.grid().integrate(&f)
}

/// `‖u‖_{2+4/N}^{2+4/N} / [(1+2/N)(‖u‖₂/‖Q‖₂)^{4/N}‖∇u‖₂²]`; at most one.
pub fn gagliardo_nirenberg_ratio(u: &RadialFunction, bundle: &GroundStateBundle) -> Result<f64> {
    let n = u.grid().dim() as f64;
    let p = 4.0 / n;
    let m2 = norm(u, NormKind::L2)?.powi(2);
    let g2 = norm(u, NormKind::GradL2)?.powi(2);
    if m2 == 0.0 || g2 == 0.0 {
        return invalid("Gagliardo-Nirenberg ratio of the zero function");
    }
    Ok(lp_power(u, p + 2.0) / ((1.0 + 2.0 / n) * (m2 / bundle.mass2).powf(p / 2.0) * g2))
}

/// `½‖∇u‖² - (1/(2+4/N))‖u‖_{2+4/N}^{2+4/N}`.
pub fn energy_crit(u: &RadialFunction) -> Result<f64> {
    let p = 4.0 / u.grid().dim() as f64;
    Ok(0.5 * norm(u, NormKind::GradL2)?.powi(2) - lp_power(u, p + 2.0) / (p + 2.0))
}

/// Energy of (NLS±): `E_crit(u) ∓ ½‖|x|^{-σ}u‖²` with `sign = ±1`;
/// `sigma = 0` drops the potential.
pub fn energy(u: &RadialFunction, sigma: f64, sign: f64) -> Result<f64> {
    let pot = if sigma > 0.0 { norm(u, NormKind::Weighted(-sigma))?.powi(2) } else { 0.0 };
    Ok(energy_crit(u)? - 0.5 * sign * pot)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::radial_core::{inner, lambda_op};
    use std::f64::consts::PI;

    #[test]
    fn one_dimensional_closed_form() {
        let g = RadialGrid::new(1, 0.01, 30.0).unwrap();
        let b = solve_ground_state(&g, 0.3, 1e-8).unwrap();
        assert!((b.q0 - 3f64.powf(0.25)).abs() < 1e-7, "{}", b.q0);
        assert!((b.mass2 / (3f64.sqrt() * PI / 2.0) - 1.0).abs() < 1e-8);
        let max_err = g
            .nodes()
            .iter()
            .zip(&b.qv)
            .map(|(x, q)| (q - 3f64.powf(0.25) / (2.0 * x).cosh().sqrt()).abs())
            .fold(0.0, f64::max);
        assert!(max_err < 1e-7, "{max_err}");
        assert!((b.gn_check - 1.0).abs() < 1e-6);
        assert!(b.energy_crit.abs() < 1e-7);
    }

    #[test]
    fn shooting_bracket_is_unique() {
        for dim in 1..=3 {
            assert_eq!(scan_brackets(dim, 0.5, 6.0, 200).len(), 1, "N={dim}");
        }
    }

    #[test]
    fn two_dimensional_townes_mass() {
        let m = |h: f64| {
            let g = RadialGrid::new(2, h, 30.0).unwrap();
            solve_ground_state(&g, 0.3, 1e-8).unwrap()
        };
        let (a, b) = (m(0.02), m(0.01));
        // Richardson-extrapolated oracle from an independent scipy shooting code.
        assert!((b.mass2 - 11.700896).abs() < 2e-5, "{}", b.mass2);
        assert!((a.mass2 - b.mass2).abs() < 1e-4);
        assert!((b.q0 - 2.206200).abs() < 1e-5, "{}", b.q0);
        // Q positive and decreasing while above roundoff.
        for w in b.qv.windows(2) {
            if w[1] > 1e-12 {
                assert!(w[1] < w[0]);
            }
        }
        // Pohozaev consistency: (-ΔQ + Q - f(Q), ΛQ) = 0.
        let g = b.grid().clone();
        let res = RadialFunction::from_real(&g, &el_residual(&g, &b.qv));
        assert!(inner(&res, &lambda_op(&b.q)).unwrap().abs() < 1e-8);
    }

    #[test]
    fn energies() {
        let g = RadialGrid::new(2, 0.01, 20.0).unwrap();
        let b = solve_ground_state(&g, 0.3, 1e-8).unwrap();
        let e = energy(&b.q, 0.3, 1.0).unwrap();
        assert!((e - (b.energy_crit - 0.5 * b.inv_sigma2)).abs() < 1e-12);
        assert!(e < 0.0);
        assert!(energy(&b.q, 0.0, 1.0).unwrap().abs() < 1e-6, "{}", b.energy_crit);
        assert_eq!(energy(&RadialFunction::zeros(&g), 0.3, 1.0).unwrap(), 0.0);
        let gauss = RadialFunction::from_real_fn(&g, |r| (-r * r).exp());
        let ratio = gagliardo_nirenberg_ratio(&gauss, &b).unwrap();
        assert!(ratio > 0.0 && ratio < 1.0);
        assert!(gagliardo_nirenberg_ratio(&RadialFunction::zeros(&g), &b).is_err());
    }
}

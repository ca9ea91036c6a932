//! Cell-centered radial grids, grid functions, and the weighted integrals
//! and differential operators built on them.
//!
//! Nodes sit at `r_k = (k - 1/2) h`, so the origin is never sampled. Radial
//! integrals `∫ φ(r) c_N r^{N-1} dr` use the midpoint rule with a zeta-function
//! correction at the first three nodes, which makes the rule high order for
//! even integrands carrying a (possibly fractional) power of `r`.

use crate::banded::{BandMatrix, Scalar};
use crate::error::{invalid, LabError, Result};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::sync::Arc;

const D2: [f64; 5] = [-1.0 / 12.0, 4.0 / 3.0, -5.0 / 2.0, 4.0 / 3.0, -1.0 / 12.0];
const D1: [f64; 5] = [1.0 / 12.0, -2.0 / 3.0, 0.0, 2.0 / 3.0, -1.0 / 12.0];
/// Number of near-origin nodes whose weights are re-balanced against the
/// discrete Laplacian.
const DUAL_NODES: usize = 12;

/// Surface measure of the unit sphere; `2` in one dimension (even functions
/// on the whole line).
pub fn sphere_area(dim: usize) -> f64 {
    match dim {
        1 => 2.0,
        2 => 2.0 * std::f64::consts::PI,
        _ => 4.0 * std::f64::consts::PI,
    }
}

/// Hurwitz zeta `ζ(s, a)` for real `s != 1`, `a > 0`, by Euler–Maclaurin
/// summation (valid on the analytic continuation as well).
pub fn hurwitz_zeta(s: f64, a: f64) -> f64 {
    const B2K: [f64; 10] = [
        1.0 / 6.0,
        -1.0 / 30.0,
        1.0 / 42.0,
        -1.0 / 30.0,
        5.0 / 66.0,
        -691.0 / 2730.0,
        7.0 / 6.0,
        -3617.0 / 510.0,
        43867.0 / 798.0,
        -174611.0 / 330.0,
    ];
    let n = 30usize;
    let mut sum: f64 = (0..n).map(|k| (k as f64 + a).powf(-s)).sum();
    let x = n as f64 + a;
    sum += x.powf(1.0 - s) / (s - 1.0) + 0.5 * x.powf(-s);
    // rising factorial s (s+1) ... (s+2j-2) / (2j)!
    let mut poch = s;
    let mut fact = 2.0;
    for (j, b) in B2K.iter().enumerate() {
        let j = j + 1;
        sum += b / fact * poch * x.powf(-s - 2.0 * j as f64 + 1.0);
        poch *= (s + 2.0 * j as f64 - 1.0) * (s + 2.0 * j as f64);
        fact *= (2 * j + 1) as f64 * (2 * j + 2) as f64;
    }
    sum
}

#[derive(Debug)]
pub struct RadialGrid {
    dim: usize,
    h: f64,
    r_max: f64,
    nodes: Vec<f64>,
    weights: Vec<f64>,
    dual: Vec<f64>,
}

impl RadialGrid {
    /// Builds the grid with `M = round(r_max / h)` cells.
    pub fn new(dim: usize, h: f64, r_max: f64) -> Result<Arc<Self>> {
        if !(1..=3).contains(&dim) {
            return invalid(format!("dimension must be 1, 2 or 3, got {dim}"));
        }
        if !(h > 0.0 && r_max > 0.0 && h.is_finite() && r_max.is_finite()) {
            return invalid("h and r_max must be positive");
        }
        let m = (r_max / h).round() as usize;
        if m < 2 * DUAL_NODES {
            return invalid(format!("grid too coarse: only {m} cells"));
        }
        let nodes: Vec<f64> = (0..m).map(|k| (k as f64 + 0.5) * h).collect();
        let mut grid = RadialGrid { dim, h, r_max: m as f64 * h, nodes, weights: Vec::new(), dual: Vec::new() };
        grid.weights = grid.power_weights(0.0);
        grid.dual = grid.compute_dual_weights()?;
        Ok(Arc::new(grid))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn h(&self) -> f64 {
        self.h
    }
    pub fn r_max(&self) -> f64 {
        self.r_max
    }
    pub fn len(&self) -> usize {
        self.nodes.len()
    }
    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }
    /// Quadrature weights for `∫ φ c_N r^{N-1} dr`, φ even and smooth.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
    /// Weights adapted to the discrete Laplacian near the origin; equal to
    /// `weights()` beyond the first few nodes.
    pub fn dual_weights(&self) -> &[f64] {
        &self.dual
    }

    pub fn same_as(&self, other: &RadialGrid) -> bool {
        std::ptr::eq(self, other)
            || (self.dim == other.dim && self.h == other.h && self.nodes.len() == other.nodes.len())
    }

    /// Weights for `∫ φ(r) r^{t_extra} c_N r^{N-1} dr` with φ even and smooth.
    /// Requires `N - 1 + t_extra > -1`.
    pub fn power_weights(&self, t_extra: f64) -> Vec<f64> {
        let c = sphere_area(self.dim);
        let t = self.dim as f64 - 1.0 + t_extra;
        let h = self.h;
        let mut w: Vec<f64> = self.nodes.iter().map(|r| c * h * r.powf(t)).collect();
        // φ(0) and φ''(0)/2 from the even quadratic fit through the first three nodes.
        let v = DMatrix::from_fn(3, 3, |i, j| self.nodes[i].powi(2 * j as i32));
        let vi = v.try_inverse().expect("Vandermonde of distinct nodes is invertible");
        let z0 = hurwitz_zeta(-t, 0.5) * h.powf(t + 1.0);
        let z2 = hurwitz_zeta(-t - 2.0, 0.5) * h.powf(t + 3.0);
        for (k, wk) in w.iter_mut().take(3).enumerate() {
            *wk -= c * (z0 * vi[(0, k)] + z2 * vi[(1, k)]);
        }
        w
    }

    /// Weights for the singular measure `r^{-2σ} c_N r^{N-1} dr`.
    pub fn singular_weights(&self, sigma: f64) -> Vec<f64> {
        self.power_weights(-2.0 * sigma)
    }

    /// Discrete potential `r^{-2σ}`: exact at every node beyond the first
    /// few, and consistent with the singular quadrature near the origin.
    pub fn potential(&self, sigma: f64) -> Vec<f64> {
        self.singular_weights(sigma).iter().zip(&self.dual).map(|(a, b)| a / b).collect()
    }

    fn stencil(&self, k: usize) -> [(usize, f64); 5] {
        let m = self.nodes.len();
        let h = self.h;
        let drift = (self.dim as f64 - 1.0) / self.nodes[k];
        let mut out = [(usize::MAX, 0.0); 5];
        for (o, slot) in out.iter_mut().enumerate() {
            let j = k as isize + o as isize - 2;
            let j = if j < 0 { (-j - 1) as usize } else { j as usize };
            if j < m {
                *slot = (j, D2[o] / (h * h) + drift * D1[o] / h);
            }
        }
        out
    }

    /// Banded matrix of `u'' + (N-1)/r u'` (even reflection at the origin,
    /// zero beyond `r_max`).
    pub fn laplacian_band(&self) -> BandMatrix<f64> {
        let m = self.nodes.len();
        let mut a = BandMatrix::zeros(m, 2, 2);
        for k in 0..m {
            for (j, c) in self.stencil(k) {
                if j != usize::MAX {
                    a.add(k, j, c);
                }
            }
        }
        a
    }

    pub fn apply_laplacian<T: Scalar>(&self, u: &[T]) -> Vec<T> {
        (0..self.nodes.len())
            .map(|k| {
                let mut acc = T::default();
                for (j, c) in self.stencil(k) {
                    if j != usize::MAX {
                        acc = acc + T::from_re(c) * u[j];
                    }
                }
                acc
            })
            .collect()
    }

    /// Fourth-order first derivative with even reflection.
    pub fn derivative<T: Scalar>(&self, u: &[T]) -> Vec<T> {
        let m = self.nodes.len();
        (0..m)
            .map(|k| {
                let mut acc = T::default();
                for (o, c) in D1.iter().enumerate() {
                    if *c == 0.0 {
                        continue;
                    }
                    let j = k as isize + o as isize - 2;
                    let j = if j < 0 { (-j - 1) as usize } else { j as usize };
                    if j < m {
                        acc = acc + T::from_re(c / self.h) * u[j];
                    }
                }
                acc
            })
            .collect()
    }

    /// `Σ w_k a_k b_k`.
    pub fn dot(&self, a: &[f64], b: &[f64]) -> f64 {
        self.weights.iter().zip(a).zip(b).map(|((w, x), y)| w * x * y).sum()
    }

    pub fn integrate(&self, f: &[f64]) -> f64 {
        self.weights.iter().zip(f).map(|(w, x)| w * x).sum()
    }

    /// Left null direction of a Laplacian-based operator with kernel `g`
    /// approximated by the dual weights: `Aᵀ(W̃ g) = W̃ (A g)` for a smooth
    /// even probe `g`, solved on the first few nodes.
    fn compute_dual_weights(&self) -> Result<Vec<f64>> {
        let m = DUAL_NODES;
        let a = self.laplacian_band();
        let g: Vec<f64> = self.nodes.iter().map(|r| (-r * r).exp()).collect();
        let ag = a.matvec(&g);
        let mut mat = DMatrix::zeros(m, m);
        let mut rhs = DVector::zeros(m);
        for i in 0..m {
            for j in i.saturating_sub(2)..(i + 3).min(self.nodes.len()) {
                let aji = a.get(j, i);
                if j < m {
                    mat[(i, j)] += aji * g[j];
                } else {
                    rhs[i] -= aji * g[j] * self.weights[j];
                }
            }
            mat[(i, i)] -= ag[i];
        }
        let om =
            mat.lu().solve(&rhs).ok_or_else(|| LabError::numerical("radial_core", "dual weight system is singular"))?;
        let mut dual = self.weights.clone();
        dual[..m].copy_from_slice(om.as_slice());
        if dual.iter().any(|w| *w <= 0.0) {
            return Err(LabError::numerical("radial_core", "nonpositive dual weight"));
        }
        Ok(dual)
    }
}

/// Anything that can be evaluated as a radial profile at a radius.
pub trait Sampler {
    fn sample_at(&self, r: f64) -> Complex64;
}

impl<F: Fn(f64) -> Complex64> Sampler for F {
    fn sample_at(&self, r: f64) -> Complex64 {
        self(r)
    }
}

impl Sampler for RadialFunction {
    fn sample_at(&self, r: f64) -> Complex64 {
        self.sample(r)
    }
}

#[derive(Clone, Debug)]
pub struct RadialFunction {
    grid: Arc<RadialGrid>,
    values: Vec<Complex64>,
}

impl RadialFunction {
    pub fn new(grid: Arc<RadialGrid>, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(LabError::GridMismatch);
        }
        Ok(RadialFunction { grid, values })
    }

    pub fn zeros(grid: &Arc<RadialGrid>) -> Self {
        RadialFunction { grid: grid.clone(), values: vec![Complex64::default(); grid.len()] }
    }

    pub fn from_real(grid: &Arc<RadialGrid>, re: &[f64]) -> Self {
        assert_eq!(re.len(), grid.len());
        RadialFunction { grid: grid.clone(), values: re.iter().map(|x| Complex64::new(*x, 0.0)).collect() }
    }

    pub fn from_parts(grid: &Arc<RadialGrid>, re: &[f64], im: &[f64]) -> Self {
        assert_eq!(re.len(), grid.len());
        assert_eq!(im.len(), grid.len());
        RadialFunction { grid: grid.clone(), values: re.iter().zip(im).map(|(a, b)| Complex64::new(*a, *b)).collect() }
    }

    pub fn from_fn(grid: &Arc<RadialGrid>, f: impl Fn(f64) -> Complex64) -> Self {
        RadialFunction { grid: grid.clone(), values: grid.nodes().iter().map(|r| f(*r)).collect() }
    }

    pub fn from_real_fn(grid: &Arc<RadialGrid>, f: impl Fn(f64) -> f64) -> Self {
        Self::from_fn(grid, |r| Complex64::new(f(r), 0.0))
    }

    pub fn grid(&self) -> &Arc<RadialGrid> {
        &self.grid
    }
    pub fn values(&self) -> &[Complex64] {
        &self.values
    }
    pub fn values_mut(&mut self) -> &mut [Complex64] {
        &mut self.values
    }
    pub fn into_values(self) -> Vec<Complex64> {
        self.values
    }
    pub fn re(&self) -> Vec<f64> {
        self.values.iter().map(|z| z.re).collect()
    }
    pub fn im(&self) -> Vec<f64> {
        self.values.iter().map(|z| z.im).collect()
    }

    fn check(&self, other: &RadialFunction) -> Result<()> {
        if self.grid.same_as(&other.grid) {
            Ok(())
        } else {
            Err(LabError::GridMismatch)
        }
    }

    pub fn add(&self, other: &RadialFunction) -> Result<RadialFunction> {
        self.check(other)?;
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a + b).collect();
        Ok(RadialFunction { grid: self.grid.clone(), values })
    }

    pub fn sub(&self, other: &RadialFunction) -> Result<RadialFunction> {
        self.check(other)?;
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect();
        Ok(RadialFunction { grid: self.grid.clone(), values })
    }

    pub fn scale(&self, c: Complex64) -> RadialFunction {
        RadialFunction { grid: self.grid.clone(), values: self.values.iter().map(|v| v * c).collect() }
    }

    /// Pointwise product with a real node function.
    pub fn mul_real(&self, f: &[f64]) -> RadialFunction {
        RadialFunction { grid: self.grid.clone(), values: self.values.iter().zip(f).map(|(v, a)| v * a).collect() }
    }

    pub fn map(&self, f: impl Fn(f64, Complex64) -> Complex64) -> RadialFunction {
        let values = self.grid.nodes().iter().zip(&self.values).map(|(r, v)| f(*r, *v)).collect();
        RadialFunction { grid: self.grid.clone(), values }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// Six-point Lagrange interpolation at radius `r`, using the even
    /// extension across the origin and zero beyond `r_max`.
    pub fn sample(&self, r: f64) -> Complex64 {
        let r = r.abs();
        let h = self.grid.h();
        let n = self.values.len() as i64;
        if r >= self.grid.r_max() {
            return Complex64::default();
        }
        // Node k sits at (k + 1/2) h with k zero-based.
        let x = r / h - 0.5;
        let k0 = x.floor() as i64 - 2;
        let at = |k: i64| -> Complex64 {
            let k = if k < 0 { -k - 1 } else { k };
            if k >= n {
                Complex64::default()
            } else {
                self.values[k as usize]
            }
        };
        let mut out = Complex64::default();
        for i in 0..6 {
            let xi = (k0 + i) as f64;
            let mut l = 1.0;
            for j in 0..6 {
                if j != i {
                    let xj = (k0 + j) as f64;
                    l *= (x - xj) / (xi - xj);
                }
            }
            out += at(k0 + i) * l;
        }
        out
    }

    /// Writes `r,re,im` rows.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["r", "re", "im"])?;
        for (r, v) in self.grid.nodes().iter().zip(&self.values) {
            w.write_record([format!("{r:.17e}"), format!("{:.17e}", v.re), format!("{:.17e}", v.im)])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a file written by [`write_csv`](Self::write_csv) onto `grid`.
    pub fn read_csv(grid: &Arc<RadialGrid>, path: &Path) -> Result<Self> {
        let mut rd = csv::Reader::from_path(path)?;
        let mut values = Vec::with_capacity(grid.len());
        for (k, rec) in rd.deserialize::<(f64, f64, f64)>().enumerate() {
            let (r, re, im) = rec?;
            if k >= grid.len() || (r - grid.nodes()[k]).abs() > 1e-9 * grid.h() {
                return Err(LabError::GridMismatch);
            }
            values.push(Complex64::new(re, im));
        }
        RadialFunction::new(grid.clone(), values)
    }

    pub fn header(&self) -> GridHeader {
        GridHeader::of(&self.grid)
    }

    /// Self-describing JSON: grid header plus value arrays.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "header": self.header(),
            "re": self.re(),
            "im": self.im(),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridHeader {
    #[serde(rename = "N")]
    pub dim: usize,
    pub h: f64,
    #[serde(rename = "R_max")]
    pub r_max: f64,
    #[serde(rename = "M")]
    pub m: usize,
}

impl GridHeader {
    pub fn of(grid: &RadialGrid) -> Self {
        GridHeader { dim: grid.dim(), h: grid.h(), r_max: grid.r_max(), m: grid.len() }
    }

    pub fn build(&self) -> Result<Arc<RadialGrid>> {
        RadialGrid::new(self.dim, self.h, self.r_max)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum NormKind {
    L2,
    H1,
    GradL2,
    /// `‖ |y|^p u ‖₂`.
    Weighted(f64),
}

/// `Re ∫ u v̄` with the radial measure.
pub fn inner(u: &RadialFunction, v: &RadialFunction) -> Result<f64> {
    u.check(v)?;
    Ok(u.grid.weights().iter().zip(&u.values).zip(&v.values).map(|((w, a), b)| w * (a * b.conj()).re).sum())
}

fn weighted_sq(grid: &RadialGrid, w: &[f64], u: &[Complex64]) -> f64 {
    debug_assert_eq!(grid.len(), u.len());
    w.iter().zip(u).map(|(w, v)| w * v.norm_sqr()).sum()
}

pub fn norm(u: &RadialFunction, kind: NormKind) -> Result<f64> {
    let g = &u.grid;
    let sq = match kind {
        NormKind::L2 => weighted_sq(g, g.weights(), &u.values),
        NormKind::GradL2 => weighted_sq(g, g.weights(), &g.derivative(&u.values)),
        NormKind::H1 => weighted_sq(g, g.weights(), &u.values) + weighted_sq(g, g.weights(), &g.derivative(&u.values)),
        NormKind::Weighted(p) => {
            if 2.0 * p <= -(g.dim() as f64) {
                return invalid(format!("|y|^{p} u is not square integrable near the origin in dimension {}", g.dim()));
            }
            weighted_sq(g, &g.power_weights(2.0 * p), &u.values)
        }
    };
    Ok(sq.max(0.0).sqrt())
}

/// `Λu = (N/2) u + r ∂_r u`.
pub fn lambda_op(u: &RadialFunction) -> RadialFunction {
    let g = &u.grid;
    let du = g.derivative(&u.values);
    let half = g.dim() as f64 / 2.0;
    let values = g.nodes().iter().zip(&u.values).zip(&du).map(|((r, v), d)| v * half + d * *r).collect();
    RadialFunction { grid: g.clone(), values }
}

pub fn laplacian(u: &RadialFunction) -> RadialFunction {
    RadialFunction { grid: u.grid.clone(), values: u.grid.apply_laplacian(&u.values) }
}

pub fn gradient(u: &RadialFunction) -> RadialFunction {
    RadialFunction { grid: u.grid.clone(), values: u.grid.derivative(&u.values) }
}

/// `f(u) = |u|^{4/N} u`.
pub fn nonlinearity(u: &RadialFunction) -> RadialFunction {
    let p = 4.0 / u.grid.dim() as f64;
    u.map(|_, v| v * v.norm().powf(p))
}

/// `± r^{-2σ} u` with `sign = ±1`.
pub fn potential_apply(u: &RadialFunction, sigma: f64, sign: f64) -> RadialFunction {
    let v = u.grid.potential(sigma);
    let values = u.values.iter().zip(&v).map(|(a, p)| a * (sign * p)).collect();
    RadialFunction { grid: u.grid.clone(), values }
}

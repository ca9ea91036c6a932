//! Linearized operators around the ground state and their radial solves.

use crate::banded::{BandLu, BandMatrix};
use crate::error::{invalid, LabError, Result};
use crate::ground_state::{solve_ground_state, GroundStateBundle};
use crate::radial_core::{lambda_op, RadialFunction, RadialGrid};
use nalgebra::{Cholesky, DMatrix, SymmetricEigen};
use serde::Serialize;
use std::sync::Arc;

/// Pivot spread above which a factorization is reported as ill-conditioned.
const CONDITION_LIMIT: f64 = 1e13;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Which {
    Plus,
    Minus,
}

#[derive(Clone, Debug)]
pub struct LinearizedOperator {
    which: Which,
    matrix: BandMatrix<f64>,
}

impl LinearizedOperator {
    /// Assembles `-Δ + 1 - c Q^{4/N}` with `c = 1 + 4/N` (plus) or `1` (minus).
    pub fn new(bundle: &GroundStateBundle, which: Which) -> Self {
        let grid = bundle.grid();
        let p = 4.0 / grid.dim() as f64;
        let c = match which {
            Which::Plus => 1.0 + p,
            Which::Minus => 1.0,
        };
        let a = grid.laplacian_band();
        let n = grid.len();
        let mut m = BandMatrix::zeros(n, 2, 2);
        for i in 0..n {
            for j in i.saturating_sub(2)..(i + 3).min(n) {
                let mut v = -a.get(i, j);
                if i == j {
                    v += 1.0 - c * bundle.qv[i].abs().powf(p);
                }
                m.set(i, j, v);
            }
        }
        LinearizedOperator { which, matrix: m }
    }

    pub fn which(&self) -> Which {
        self.which
    }

    pub fn matrix(&self) -> &BandMatrix<f64> {
        &self.matrix
    }

    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        self.matrix.matvec(u)
    }

    /// Acts on real and imaginary parts separately.
    pub fn apply_fn(&self, u: &RadialFunction) -> RadialFunction {
        let re = self.apply(&u.re());
        let im = self.apply(&u.im());
        RadialFunction::from_parts(u.grid(), &re, &im)
    }
}

/// Both operators with their factorizations and the cached `ρ`.
#[derive(Clone, Debug)]
pub struct Linops {
    grid: Arc<RadialGrid>,
    q: Vec<f64>,
    q_norm2: f64,
    plus: LinearizedOperator,
    minus: LinearizedOperator,
    plus_lu: BandLu<f64>,
    /// Factorization of `L₋` with the node order reversed, so the vanishing
    /// pivot lands on the node closest to the origin.
    minus_rev_lu: BandLu<f64>,
    /// Left kernel of the discrete `L₋`, normalized by `yᵀQ = ‖Q‖²`.
    left_null: Vec<f64>,
    rho: Vec<f64>,
    plus_condition: f64,
}

fn reversed(v: &[f64]) -> Vec<f64> {
    v.iter().rev().copied().collect()
}

impl Linops {
    pub fn new(bundle: &GroundStateBundle) -> Result<Self> {
        let grid = bundle.grid().clone();
        let n = grid.len();
        let plus = LinearizedOperator::new(bundle, Which::Plus);
        let minus = LinearizedOperator::new(bundle, Which::Minus);
        let plus_lu = plus.matrix.clone().factor();
        let plus_condition = plus_lu.pivot_spread();
        if !(plus_condition < CONDITION_LIMIT) {
            return Err(LabError::numerical(
                "linops",
                format!("L+ ill-conditioned, pivot spread {plus_condition:.3e}"),
            ));
        }
        let mut rev = BandMatrix::zeros(n, 2, 2);
        for i in 0..n {
            for j in i.saturating_sub(2)..(i + 3).min(n) {
                rev.set(n - 1 - i, n - 1 - j, minus.matrix.get(i, j));
            }
        }
        let minus_rev_lu = rev.factor();
        let mut left_null = reversed(&minus_rev_lu.left_null_last());
        let q = bundle.qv.clone();
        let q_norm2 = grid.dot(&q, &q);
        let yq: f64 = left_null.iter().zip(&q).map(|(a, b)| a * b).sum();
        if yq.abs() < f64::MIN_POSITIVE {
            return Err(LabError::numerical("linops", "left kernel of L- is orthogonal to Q"));
        }
        left_null.iter_mut().for_each(|v| *v *= q_norm2 / yq);
        let r2q: Vec<f64> = grid.nodes().iter().zip(&q).map(|(r, v)| r * r * v).collect();
        let rho = plus_lu.solve(&r2q);
        Ok(Linops { grid, q, q_norm2, plus, minus, plus_lu, minus_rev_lu, left_null, rho, plus_condition })
    }

    pub fn grid(&self) -> &Arc<RadialGrid> {
        &self.grid
    }
    pub fn plus(&self) -> &LinearizedOperator {
        &self.plus
    }
    pub fn minus(&self) -> &LinearizedOperator {
        &self.minus
    }
    pub fn q(&self) -> &[f64] {
        &self.q
    }
    /// Solution of `L₊ρ = |y|²Q`.
    pub fn rho(&self) -> &[f64] {
        &self.rho
    }
    pub fn left_null(&self) -> &[f64] {
        &self.left_null
    }
    pub fn plus_condition(&self) -> f64 {
        self.plus_condition
    }

    /// `L₊ f = g` for radial `g`.
    pub fn solve_plus(&self, g: &[f64]) -> Result<Vec<f64>> {
        if g.len() != self.grid.len() {
            return Err(LabError::GridMismatch);
        }
        Ok(self.plus_lu.solve(g))
    }

    /// Discrete compatibility coefficient: `g - ν Q` lies in the range of
    /// the discrete `L₋`.
    pub fn minus_compatibility(&self, g: &[f64]) -> f64 {
        let yg: f64 = self.left_null.iter().zip(g).map(|(a, b)| a * b).sum();
        yg / self.q_norm2
    }

    /// Solves `L₋ f = g - νQ` with the discrete compatibility shift `ν` and
    /// the gauge `(f, Q)₂ = 0`. No continuum solvability check.
    pub fn solve_minus_projected(&self, g: &[f64]) -> (Vec<f64>, f64) {
        let nu = self.minus_compatibility(g);
        let gc: Vec<f64> = g.iter().zip(&self.q).map(|(a, q)| a - nu * q).collect();
        let mut f = reversed(&self.minus_rev_lu.solve_singular_last(&reversed(&gc)));
        let c = self.grid.dot(&f, &self.q) / self.q_norm2;
        f.iter_mut().zip(&self.q).for_each(|(fi, qi)| *fi -= c * qi);
        (f, nu)
    }

    /// `L₋ f = g` subject to `(g, Q)₂ ≈ 0`, returning the representative
    /// with `(f, Q)₂ = 0`.
    pub fn solve_minus(&self, g: &[f64], tol: f64) -> Result<Vec<f64>> {
        if g.len() != self.grid.len() {
            return Err(LabError::GridMismatch);
        }
        let gq = self.grid.dot(g, &self.q);
        let gn = self.grid.dot(g, g).sqrt();
        if gq.abs() > tol * gn * self.q_norm2.sqrt() {
            return Err(LabError::Solvability(gq));
        }
        Ok(self.solve_minus_projected(g).0)
    }

    /// Residual table for the four operator identities plus the `(Q, ρ)`
    /// pairing.
    pub fn identity_report(&self, bundle: &GroundStateBundle) -> IdentityReport {
        let g = &self.grid;
        let nrm = |v: &[f64]| g.dot(v, v).sqrt();
        let q = &self.q;
        let lq = lambda_op(&bundle.q).re();
        let r2q: Vec<f64> = g.nodes().iter().zip(q).map(|(r, v)| r * r * v).collect();
        let comb = |a: &[f64], s: f64, b: &[f64]| a.iter().zip(b).map(|(x, y)| x + s * y).collect::<Vec<f64>>();
        let q_norm = self.q_norm2.sqrt();
        let q_rho = g.dot(q, &self.rho);
        IdentityReport {
            minus_q: nrm(&self.minus.apply(q)) / q_norm,
            plus_lambda_q: nrm(&comb(&self.plus.apply(&lq), 2.0, q)) / q_norm,
            minus_r2q: nrm(&comb(&self.minus.apply(&r2q), 4.0, &lq)) / q_norm,
            plus_rho: nrm(&comb(&self.plus.apply(&self.rho), -1.0, &r2q)) / q_norm,
            q_rho,
            half_virial4: 0.5 * bundle.virial4,
            half_virial2: 0.5 * bundle.virial2,
            q_rho_vs_virial4: (q_rho / (0.5 * bundle.virial4) - 1.0).abs(),
            q_rho_vs_virial2: (q_rho / (0.5 * bundle.virial2) - 1.0).abs(),
            plus_condition: self.plus_condition,
        }
    }
}

/// Relative residuals (divided by `‖Q‖₂`) of the operator identities.
#[derive(Clone, Debug, Serialize)]
pub struct IdentityReport {
    /// `‖L₋Q‖`.
    pub minus_q: f64,
    /// `‖L₊ΛQ + 2Q‖`.
    pub plus_lambda_q: f64,
    /// `‖L₋(|y|²Q) + 4ΛQ‖`.
    pub minus_r2q: f64,
    /// `‖L₊ρ - |y|²Q‖`.
    pub plus_rho: f64,
    pub q_rho: f64,
    /// `½‖|y|²Q‖²`.
    pub half_virial4: f64,
    /// `½‖|y|Q‖²`.
    pub half_virial2: f64,
    pub q_rho_vs_virial4: f64,
    pub q_rho_vs_virial2: f64,
    pub plus_condition: f64,
}

impl IdentityReport {
    pub fn max_operator_residual(&self) -> f64 {
        self.minus_q.max(self.plus_lambda_q).max(self.minus_r2q).max(self.plus_rho)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Coercivity {
    /// `min(mu_plus, mu_minus)`.
    pub mu: f64,
    /// Minimum of `⟨L₊v,v⟩/‖v‖²_{H¹}` over `v ⊥ {Q, |y|²Q}`.
    pub mu_plus: f64,
    /// Minimum of `⟨L₋w,w⟩/‖w‖²_{H¹}` over `w ⊥ ρ`.
    pub mu_minus: f64,
    /// Same quotient for `L₊` over `v ⊥ Q` only.
    pub plus_without_r2q: f64,
    /// Unconstrained minimum for `L₊`.
    pub plus_unconstrained: f64,
    /// Minimum for `L₋` over `w ⊥ Q`.
    pub minus_perp_q: f64,
    pub h: f64,
    pub r_max: f64,
}

/// Smallest generalized eigenvalue of `(A, G)` restricted to the
/// `W`-orthogonal complement of `constraints`.
fn constrained_min(a: &DMatrix<f64>, gram: &DMatrix<f64>, weights: &[f64], constraints: &[Vec<f64>]) -> Result<f64> {
    let n = a.nrows();
    let basis = if constraints.is_empty() {
        DMatrix::identity(n, n)
    } else {
        let c = DMatrix::from_fn(n, constraints.len(), |i, j| weights[i] * constraints[j][i]);
        let ctc = c.transpose() * &c;
        let inv =
            ctc.try_inverse().ok_or_else(|| LabError::numerical("linops", "degenerate coercivity constraints"))?;
        let proj = DMatrix::identity(n, n) - &c * inv * c.transpose();
        let eig = SymmetricEigen::new(proj);
        let keep: Vec<usize> = (0..n).filter(|&i| eig.eigenvalues[i] > 0.5).collect();
        DMatrix::from_fn(n, keep.len(), |i, j| eig.eigenvectors[(i, keep[j])])
    };
    let ar = basis.transpose() * a * &basis;
    let gr = basis.transpose() * gram * &basis;
    let chol = Cholesky::new(gr).ok_or_else(|| LabError::numerical("linops", "H1 Gram matrix not positive"))?;
    let l = chol.l();
    let linv = l.clone().try_inverse().ok_or_else(|| LabError::numerical("linops", "singular Cholesky factor"))?;
    let s = &linv * ar * linv.transpose();
    let s = (&s + s.transpose()) * 0.5;
    let eig = SymmetricEigen::new(s);
    Ok(eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min))
}

/// Coercivity constant of the constrained quadratic forms, computed by dense
/// generalized eigensolves on a coarse grid of spacing `h` and radius `r_max`.
pub fn coercivity_mu(dim: usize, sigma: f64, h: f64, r_max: f64) -> Result<Coercivity> {
    if r_max < 12.0 {
        return invalid("coercivity grid needs r_max >= 12");
    }
    let grid = RadialGrid::new(dim, h, r_max)?;
    let bundle = solve_ground_state(&grid, sigma, 1e-6)?;
    let ops = Linops::new(&bundle)?;
    let n = grid.len();
    let w = grid.weights();
    // Quadratic forms in the weighted inner product, symmetrized.
    let form = |op: &LinearizedOperator| {
        let m = DMatrix::from_fn(n, n, |i, j| w[i] * op.matrix().get(i, j));
        (&m + m.transpose()) * 0.5
    };
    let mut d = DMatrix::zeros(n, n);
    for k in 0..n {
        let mut e = vec![0.0; n];
        e[k] = 1.0;
        let col = grid.derivative(&e);
        for (i, v) in col.iter().enumerate() {
            d[(i, k)] = *v;
        }
    }
    let wd = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(w));
    let gram = &wd + d.transpose() * &wd * &d;
    let ap = form(&ops.plus);
    let am = form(&ops.minus);
    let q = ops.q().to_vec();
    let r2q: Vec<f64> = grid.nodes().iter().zip(&q).map(|(r, v)| r * r * v).collect();
    let mu_plus = constrained_min(&ap, &gram, w, &[q.clone(), r2q])?;
    let mu_minus = constrained_min(&am, &gram, w, &[ops.rho().to_vec()])?;
    Ok(Coercivity {
        mu: mu_plus.min(mu_minus),
        mu_plus,
        mu_minus,
        plus_without_r2q: constrained_min(&ap, &gram, w, std::slice::from_ref(&q))?,
        plus_unconstrained: constrained_min(&ap, &gram, w, &[])?,
        minus_perp_q: constrained_min(&am, &gram, w, &[q])?,
        h,
        r_max: grid.r_max(),
    })
}

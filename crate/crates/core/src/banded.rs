//! Banded LU with partial pivoting, real or complex.
//!
//! Storage follows the LAPACK `gbtrf` layout: column-major, `2*kl + ku + 1`
//! rows per column, entry `(i, j)` at row `kl + ku + i - j`.

use num_complex::Complex64;
use std::ops::{Add, Div, Mul, MulAssign, Neg, Sub, SubAssign};

pub trait Scalar:
    Copy
    + Default
    + PartialEq
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + SubAssign
    + MulAssign
    + Send
    + Sync
    + std::fmt::Debug
{
    fn modulus(self) -> f64;
    fn from_re(x: f64) -> Self;
    fn conj(self) -> Self;
}

impl Scalar for f64 {
    fn modulus(self) -> f64 {
        self.abs()
    }
    fn from_re(x: f64) -> Self {
        x
    }
    fn conj(self) -> Self {
        self
    }
}

impl Scalar for Complex64 {
    fn modulus(self) -> f64 {
        self.norm()
    }
    fn from_re(x: f64) -> Self {
        Complex64::new(x, 0.0)
    }
    fn conj(self) -> Self {
        Complex64::conj(&self)
    }
}

#[derive(Clone, Debug)]
pub struct BandMatrix<T> {
    n: usize,
    kl: usize,
    ku: usize,
    ab: Vec<T>,
}

impl<T: Scalar> BandMatrix<T> {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        let ld = 2 * kl + ku + 1;
        BandMatrix { n, kl, ku, ab: vec![T::default(); ld * n] }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    fn ld(&self) -> usize {
        2 * self.kl + self.ku + 1
    }

    fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(i + self.ku >= j && j + self.kl >= i, "({i},{j}) outside band");
        j * self.ld() + self.kl + self.ku + i - j
    }

    pub fn in_band(&self, i: usize, j: usize) -> bool {
        i < self.n && j < self.n && i + self.ku >= j && j + self.kl >= i
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        if self.in_band(i, j) {
            self.ab[self.idx(i, j)]
        } else {
            T::default()
        }
    }

    pub fn set(&mut self, i: usize, j: usize, v: T) {
        let k = self.idx(i, j);
        self.ab[k] = v;
    }

    pub fn add(&mut self, i: usize, j: usize, v: T) {
        let k = self.idx(i, j);
        self.ab[k] = self.ab[k] + v;
    }

    pub fn matvec(&self, x: &[T]) -> Vec<T> {
        assert_eq!(x.len(), self.n);
        let mut y = vec![T::default(); self.n];
        for (i, yi) in y.iter_mut().enumerate() {
            let lo = i.saturating_sub(self.kl);
            let hi = (i + self.ku).min(self.n - 1);
            let ld = self.ld();
            let off = self.kl + self.ku + i;
            let mut acc = T::default();
            for (j, xj) in x[lo..=hi].iter().enumerate().map(|(k, v)| (lo + k, v)) {
                acc = acc + self.ab[j * ld + off - j] * *xj;
            }
            *yi = acc;
        }
        y
    }

    /// Transposed product `A^T x`.
    pub fn matvec_t(&self, x: &[T]) -> Vec<T> {
        assert_eq!(x.len(), self.n);
        let mut y = vec![T::default(); self.n];
        for (i, xi) in x.iter().enumerate() {
            let lo = i.saturating_sub(self.kl);
            let hi = (i + self.ku).min(self.n - 1);
            for (j, yj) in y.iter_mut().enumerate().take(hi + 1).skip(lo) {
                *yj = *yj + self.ab[self.idx(i, j)] * *xi;
            }
        }
        y
    }

    /// Factorizes in place. Zero pivots are recorded, not rejected, so that
    /// systems with a known one-dimensional kernel can still be handled.
    pub fn factor(mut self) -> BandLu<T> {
        let (n, kl, ku) = (self.n, self.kl, self.ku);
        let kv = kl + ku;
        let ld = self.ld();
        let mut ipiv = vec![0usize; n];
        let mut scale = 0.0f64;
        for v in &self.ab {
            scale = scale.max(v.modulus());
        }
        let mut ju = 0usize;
        #[allow(clippy::needless_range_loop)]
        for j in 0..n {
            let km = kl.min(n - 1 - j);
            let col = j * ld;
            let mut jp = 0usize;
            let mut best = -1.0;
            for p in 0..=km {
                let m = self.ab[col + kv + p].modulus();
                if m > best {
                    best = m;
                    jp = p;
                }
            }
            ipiv[j] = j + jp;
            if self.ab[col + kv + jp] == T::default() {
                continue;
            }
            ju = ju.max((j + ku + jp).min(n - 1));
            if jp != 0 {
                for c in j..=ju {
                    let a = c * ld + kv + j + jp - c;
                    let b = c * ld + kv + j - c;
                    self.ab.swap(a, b);
                }
            }
            if km > 0 {
                let piv = self.ab[col + kv];
                for i in 1..=km {
                    let v = self.ab[col + kv + i] / piv;
                    self.ab[col + kv + i] = v;
                }
                for c in (j + 1)..=ju {
                    let ujc = self.ab[c * ld + kv + j - c];
                    if ujc == T::default() {
                        continue;
                    }
                    for i in 1..=km {
                        let l = self.ab[col + kv + i];
                        self.ab[c * ld + kv + j + i - c] -= l * ujc;
                    }
                }
            }
        }
        let inv_diag = (0..n)
            .map(|j| {
                let d = self.ab[j * ld + kv];
                if d == T::default() {
                    T::default()
                } else {
                    T::from_re(1.0) / d
                }
            })
            .collect();
        BandLu { n, kl, ku, ab: self.ab, ipiv, inv_diag, scale }
    }
}

#[derive(Clone, Debug)]
pub struct BandLu<T> {
    n: usize,
    kl: usize,
    ku: usize,
    ab: Vec<T>,
    ipiv: Vec<usize>,
    inv_diag: Vec<T>,
    scale: f64,
}

impl<T: Scalar> BandLu<T> {
    fn ld(&self) -> usize {
        2 * self.kl + self.ku + 1
    }

    pub fn pivot(&self, j: usize) -> T {
        self.ab[j * self.ld() + self.kl + self.ku]
    }

    /// Smallest |U_jj| relative to the largest matrix entry.
    pub fn min_pivot_ratio(&self) -> f64 {
        (0..self.n).map(|j| self.pivot(j).modulus()).fold(f64::INFINITY, f64::min) / self.scale.max(f64::MIN_POSITIVE)
    }

    /// Crude condition estimate max|U_jj| / min|U_jj|.
    pub fn pivot_spread(&self) -> f64 {
        let mut lo = f64::INFINITY;
        let mut hi = 0.0f64;
        for j in 0..self.n {
            let m = self.pivot(j).modulus();
            lo = lo.min(m);
            hi = hi.max(m);
        }
        hi / lo.max(f64::MIN_POSITIVE)
    }

    fn forward(&self, b: &mut [T]) {
        let ld = self.ld();
        let kv = self.kl + self.ku;
        for j in 0..self.n {
            let km = self.kl.min(self.n - 1 - j);
            let p = self.ipiv[j];
            if p != j {
                b.swap(j, p);
            }
            let bj = b[j];
            for i in 1..=km {
                b[j + i] -= self.ab[j * ld + kv + i] * bj;
            }
        }
    }

    /// Back substitution. Pivots flagged in `skip` are treated as exact zeros
    /// and the corresponding unknown is set to zero.
    fn backward(&self, b: &mut [T], skip: Option<usize>) {
        let ld = self.ld();
        let kv = self.kl + self.ku;
        for j in (0..self.n).rev() {
            if Some(j) == skip {
                b[j] = T::default();
                continue;
            }
            b[j] *= self.inv_diag[j];
            let bj = b[j];
            for i in 1..=kv.min(j) {
                b[j - i] -= self.ab[j * ld + kv - i] * bj;
            }
        }
    }

    pub fn solve(&self, b: &[T]) -> Vec<T> {
        let mut x = b.to_vec();
        self.forward(&mut x);
        self.backward(&mut x, None);
        x
    }

    pub fn solve_in_place(&self, b: &mut [T]) {
        self.forward(b);
        self.backward(b, None);
    }

    /// Particular solution of a compatible singular system whose only
    /// vanishing pivot is the last one.
    pub fn solve_singular_last(&self, b: &[T]) -> Vec<T> {
        let mut x = b.to_vec();
        self.forward(&mut x);
        self.backward(&mut x, Some(self.n - 1));
        x
    }

    /// Left null vector y (A^T y ≈ 0) when the last pivot vanishes.
    pub fn left_null_last(&self) -> Vec<T> {
        let ld = self.ld();
        let kv = self.kl + self.ku;
        let mut y = vec![T::default(); self.n];
        y[self.n - 1] = T::from_re(1.0);
        for j in (0..self.n.saturating_sub(1)).rev() {
            let km = self.kl.min(self.n - 1 - j);
            let mut acc = y[j];
            for i in 1..=km {
                acc -= self.ab[j * ld + kv + i] * y[j + i];
            }
            y[j] = acc;
            let p = self.ipiv[j];
            if p != j {
                y.swap(j, p);
            }
        }
        y
    }

    /// Solves A^T x = b.
    pub fn solve_transpose(&self, b: &[T]) -> Vec<T> {
        let ld = self.ld();
        let kv = self.kl + self.ku;
        let mut x = b.to_vec();
        for j in 0..self.n {
            let mut acc = x[j];
            for i in 1..=kv.min(j) {
                acc -= self.ab[j * ld + kv - i] * x[j - i];
            }
            x[j] = acc / self.ab[j * ld + kv];
        }
        for j in (0..self.n.saturating_sub(1)).rev() {
            let km = self.kl.min(self.n - 1 - j);
            let mut acc = x[j];
            for i in 1..=km {
                acc -= self.ab[j * ld + kv + i] * x[j + i];
            }
            x[j] = acc;
            let p = self.ipiv[j];
            if p != j {
                x.swap(j, p);
            }
        }
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense(a: &BandMatrix<f64>) -> Vec<Vec<f64>> {
        (0..a.n()).map(|i| (0..a.n()).map(|j| a.get(i, j)).collect()).collect()
    }

    fn sample(n: usize, kl: usize, ku: usize, seed: u64) -> BandMatrix<f64> {
        let mut s = seed;
        let mut next = || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        };
        let mut a = BandMatrix::zeros(n, kl, ku);
        for i in 0..n {
            for j in i.saturating_sub(kl)..=(i + ku).min(n - 1) {
                a.set(i, j, next());
            }
        }
        a
    }

    #[test]
    fn solves_random_band_systems() {
        for &(n, kl, ku) in &[(1, 0, 0), (7, 1, 1), (30, 2, 2), (41, 3, 1), (25, 1, 4)] {
            let a = sample(n, kl, ku, n as u64 + 17);
            let x: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin() + 0.1).collect();
            let b = a.matvec(&x);
            let lu = a.clone().factor();
            let got = lu.solve(&b);
            for (g, e) in got.iter().zip(&x) {
                assert!((g - e).abs() < 1e-9, "{n} {kl} {ku}: {g} vs {e}");
            }
            let bt = a.matvec_t(&x);
            let gt = lu.solve_transpose(&bt);
            for (g, e) in gt.iter().zip(&x) {
                assert!((g - e).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn matvec_matches_dense() {
        let a = sample(9, 2, 1, 3);
        let d = dense(&a);
        let x: Vec<f64> = (0..9).map(|i| i as f64 - 3.0).collect();
        let y = a.matvec(&x);
        for i in 0..9 {
            let e: f64 = (0..9).map(|j| d[i][j] * x[j]).sum();
            assert!((y[i] - e).abs() < 1e-14);
        }
    }

    #[test]
    fn singular_system_with_known_kernel() {
        // 1D Neumann Laplacian: kernel = constants, left kernel = constants.
        let n = 12;
        let mut a = BandMatrix::zeros(n, 1, 1);
        for i in 0..n {
            let mut d = 0.0;
            if i > 0 {
                a.set(i, i - 1, -1.0);
                d += 1.0;
            }
            if i + 1 < n {
                a.set(i, i + 1, -1.0);
                d += 1.0;
            }
            a.set(i, i, d);
        }
        let lu = a.clone().factor();
        assert!(lu.pivot(n - 1).abs() < 1e-12);
        let y = lu.left_null_last();
        let aty = a.matvec_t(&y);
        assert!(aty.iter().all(|v| v.abs() < 1e-12));
        let mut g: Vec<f64> = (0..n).map(|i| (i as f64).cos()).collect();
        let mean = g.iter().sum::<f64>() / n as f64;
        g.iter_mut().for_each(|v| *v -= mean);
        let x = lu.solve_singular_last(&g);
        let r = a.matvec(&x);
        for (ri, gi) in r.iter().zip(&g) {
            assert!((ri - gi).abs() < 1e-12);
        }
    }

    #[test]
    fn complex_tridiagonal() {
        let n = 20;
        let mut a = BandMatrix::<Complex64>::zeros(n, 1, 1);
        for i in 0..n {
            a.set(i, i, Complex64::new(2.0, 0.3));
            if i > 0 {
                a.set(i, i - 1, Complex64::new(-1.0, 0.1));
            }
            if i + 1 < n {
                a.set(i, i + 1, Complex64::new(-1.0, -0.2));
            }
        }
        let x: Vec<Complex64> = (0..n).map(|i| Complex64::new(i as f64, 1.0 / (1.0 + i as f64))).collect();
        let b = a.matvec(&x);
        let got = a.factor().solve(&b);
        for (g, e) in got.iter().zip(&x) {
            assert!((g - e).norm() < 1e-10);
        }
    }
}

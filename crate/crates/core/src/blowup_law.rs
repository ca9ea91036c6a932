//! Approximate modulation laws, the `ℱ` integral, initial-parameter
//! selection and the blow-up rate constants.

use crate::error::{invalid, LabError, Result};
use crate::profile::ProfileExpansion;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LawConstants {
    pub sigma: f64,
    pub alpha: f64,
    pub beta: f64,
    /// `𝒞`, with `|t| = 𝒞 s^{-(4-α)/α}` along the approximate law.
    pub curly_c: f64,
    pub c_lambda: f64,
    pub c_b: f64,
    pub lambda0: f64,
    pub c0: f64,
    pub e0: f64,
}

impl LawConstants {
    /// `virial2 = ‖|y|Q‖₂²`.
    pub fn new(sigma: f64, beta: f64, e0: f64, virial2: f64, lambda0: f64) -> Result<Self> {
        let alpha = 2.0 - 2.0 * sigma;
        if !(alpha > 0.0 && alpha < 2.0) {
            return invalid(format!("sigma = {sigma} gives alpha outside (0, 2)"));
        }
        if !(beta > 0.0) || !(virial2 > 0.0) {
            return invalid("beta and ‖|y|Q‖² must be positive");
        }
        if !(lambda0 > 0.0 && lambda0 < 1.0) {
            return invalid(format!("lambda0 = {lambda0} outside (0, 1)"));
        }
        let k = 2.0 * beta / (2.0 - alpha);
        let c0 = 8.0 * e0 / virial2;
        if k + c0 * lambda0.powf(2.0 - alpha) <= 0.0 {
            return invalid(format!("2β/(2-α) + C0 λ0^(2-α) ≤ 0 for E0 = {e0}, lambda0 = {lambda0}"));
        }
        let a = 0.5 * alpha * k.sqrt();
        let curly_c = alpha / (4.0 - alpha) * a.powf(-4.0 / alpha);
        let c_lambda = curly_c.powf(-2.0 / (4.0 - alpha)) * a.powf(-2.0 / alpha);
        let c_b = 2.0 / alpha * curly_c.powf(-alpha / (4.0 - alpha));
        Ok(LawConstants { sigma, alpha, beta, curly_c, c_lambda, c_b, lambda0, c0, e0 })
    }

    pub fn from_expansion(exp: &ProfileExpansion, e0: f64, lambda0: f64) -> Result<Self> {
        Self::new(exp.sigma(), exp.beta(), e0, exp.bundle().virial2, lambda0)
    }

    /// `2β/(2-α)`.
    pub fn kappa(&self) -> f64 {
        2.0 * self.beta / (2.0 - self.alpha)
    }

    fn amp(&self) -> f64 {
        0.5 * self.alpha * self.kappa().sqrt()
    }

    /// Default bootstrap exponent `min{1/2, 4/α - 2}/2`.
    pub fn default_m(&self) -> f64 {
        0.5f64.min(4.0 / self.alpha - 2.0) / 2.0
    }
}

fn positive_s(s: f64) -> Result<()> {
    if s > 0.0 && s.is_finite() {
        Ok(())
    } else {
        invalid(format!("rescaled time s = {s} must be positive"))
    }
}

pub fn lambda_app(s: f64, lc: &LawConstants) -> Result<f64> {
    positive_s(s)?;
    Ok((lc.amp() * s).powf(-2.0 / lc.alpha))
}

pub fn b_app(s: f64, lc: &LawConstants) -> Result<f64> {
    positive_s(s)?;
    Ok(2.0 / (lc.alpha * s))
}

/// `ℱ(λ) = ∫_λ^{λ₀} dμ / (μ^{α/2+1} √(2β/(2-α) + C₀μ^{2-α}))`.
///
/// Integrated in `ν = μ^{-α/2}`, where the integrand is bounded.
pub fn f_integral(lambda: f64, lc: &LawConstants) -> Result<f64> {
    if !(lambda > 0.0 && lambda <= lc.lambda0) {
        return invalid(format!("F integral needs 0 < λ ≤ λ0, got {lambda}"));
    }
    let a = lc.alpha;
    let k = lc.kappa();
    let gam = 2.0 * (2.0 - a) / a;
    let nu0 = lc.lambda0.powf(-a / 2.0);
    let nu1 = lambda.powf(-a / 2.0);
    if nu1 == nu0 {
        return Ok(0.0);
    }
    // The radicand is monotone in ν, so checking the ends suffices.
    if [nu0, nu1].iter().any(|nu| k + lc.c0 * nu.powf(-gam) <= 0.0) {
        return Err(LabError::numerical("law", "negative radicand in F integral"));
    }
    let f = |nu: f64| (k + lc.c0 * nu.powf(-gam)).sqrt().recip();
    // Split geometrically so the double-exponential rule sees the
    // transition region at comparable resolution on every piece.
    let mut total = 0.0;
    let mut lo = nu0;
    let scale = (nu1 - nu0) / k.sqrt();
    while lo < nu1 {
        let hi = (lo * 4.0).min(nu1);
        total += quadrature::double_exponential::integrate(f, lo, hi, 1e-14 * scale).integral;
        lo = hi;
    }
    Ok(2.0 / a * total)
}

/// `2/(α λ^{α/2} √(2β/(2-α)))`, the leading part of `ℱ`.
pub fn f_leading(lambda: f64, lc: &LawConstants) -> f64 {
    2.0 / (lc.alpha * lambda.powf(lc.alpha / 2.0) * lc.kappa().sqrt())
}

fn f_integrand(lambda: f64, lc: &LawConstants) -> f64 {
    1.0 / (lambda.powf(lc.alpha / 2.0 + 1.0) * (lc.kappa() + lc.c0 * lambda.powf(2.0 - lc.alpha)).sqrt())
}

/// Solves `ℱ(λ₁) = s₁` and `λ₁² E(P_{λ₁,b₁,0}) = λ₁² E₀` for `b₁ ∈ (0, 1)`.
pub fn select_initial_params(s1: f64, exp: &ProfileExpansion, lc: &LawConstants) -> Result<(f64, f64)> {
    positive_s(s1)?;
    let lambda1 = solve_f(s1, lc)?;
    if lambda1 >= 0.1 {
        return invalid(format!("s1 = {s1} too small: λ1 = {lambda1} ≥ 0.1"));
    }
    let target = lambda1 * lambda1 * lc.e0;
    let h = |b: f64| exp.mass_scaled_energy(lambda1, b).1 - target;
    // First sign change: at high truncation order the polynomial tail
    // turns h negative again well before b = 1.
    let h0 = h(0.0);
    let first = (1..=200).map(|i| i as f64 / 200.0).find(|&b| h(b) > 0.0);
    let (mut lo, mut hi) = match first {
        Some(b) if h0 < 0.0 => (b - 1.0 / 200.0, b),
        _ => {
            return Err(LabError::numerical(
                "law",
                format!("no energy bracket for b1 on (0,1): h(0) = {h0:.3e}, h(1) = {:.3e}", h(1.0)),
            ))
        }
    };
    while hi - lo > 1e-12 {
        let mid = 0.5 * (lo + hi);
        if h(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut b1 = 0.5 * (lo + hi);
    let db = 1e-7;
    let slope = (h(b1 + db) - h(b1 - db)) / (2.0 * db);
    if slope > 0.0 {
        let nb = b1 - h(b1) / slope;
        if (nb - b1).abs() < 1e-10 {
            b1 = nb;
        }
    }
    Ok((lambda1, b1))
}

/// `ℱ⁻¹(s)` by bisection in `log λ` and one Newton polish.
pub fn solve_f(s: f64, lc: &LawConstants) -> Result<f64> {
    let g = |l: f64| f_integral(l, lc).map(|v| v - s);
    let mut hi = lc.lambda0;
    let mut lo = hi;
    let mut tries = 0;
    loop {
        lo *= 0.1;
        tries += 1;
        if g(lo)? > 0.0 {
            break;
        }
        if tries > 60 {
            return Err(LabError::numerical("law", format!("no bracket for F(λ) = {s}")));
        }
        hi = lo;
    }
    while hi / lo - 1.0 > 1e-12 {
        let mid = (lo * hi).sqrt();
        if g(mid)? > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let l = (lo * hi).sqrt();
    let nl = l + g(l)? / f_integrand(l, lc);
    Ok(if nl > lo * (1.0 - 1e-12) && nl < hi * (1.0 + 1e-12) { nl } else { l })
}

/// `s₁ = |t₁/𝒞|^{-α/(4-α)}`.
pub fn time_maps(t1: f64, lc: &LawConstants) -> Result<f64> {
    if !(t1 < 0.0) {
        return invalid(format!("t1 = {t1} must be negative"));
    }
    Ok((t1 / lc.curly_c).abs().powf(-lc.alpha / (4.0 - lc.alpha)))
}

/// `(𝒞_λ|t|^{2/(4-α)}, 𝒞_b|t|^{α/(4-α)})`.
pub fn predicted_rates(t: f64, lc: &LawConstants) -> Result<(f64, f64)> {
    if !(t < 0.0) {
        return invalid(format!("t = {t} must be negative"));
    }
    let a = lc.alpha;
    Ok((lc.c_lambda * (-t).powf(2.0 / (4.0 - a)), lc.c_b * (-t).powf(a / (4.0 - a))))
}

/// Time elapsed along the approximate law from `s` to `s₁`, compared
/// against the closed form: returns `(|t(s)|, |𝒞 s^{-(4-α)/α} - |t(s)||, bound)`
/// where `t(s) = t₁ - ∫_s^{s₁} λ_app² ds'` and the bound is
/// `|t(s)|^{1 + αM/(4-α)}`.
pub fn duality_check(s: f64, s1: f64, m: f64, lc: &LawConstants) -> Result<(f64, f64, f64)> {
    positive_s(s)?;
    if !(s1 > s) {
        return invalid("duality check needs s < s1");
    }
    let a = lc.alpha;
    let t1 = -lc.curly_c * s1.powf(-(4.0 - a) / a);
    // Integrate in log s.
    let out = quadrature::double_exponential::integrate(
        |x: f64| {
            let sp = x.exp();
            (lc.amp() * sp).powf(-4.0 / a) * sp
        },
        s.ln(),
        s1.ln(),
        1e-16,
    );
    let t = t1 - out.integral;
    let closed = lc.curly_c * s.powf(-(4.0 - a) / a);
    let bound = t.abs().powf(1.0 + a * m / (4.0 - a));
    Ok((t.abs(), (closed - t.abs()).abs(), bound))
}

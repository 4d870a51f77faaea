//! Closed-form limit objects: Gaussian kernels, Ψ, Γ₁, Γ₂, the limit
//! covariances of the linear models, and the ASEP flux.

use crate::error::{domain, Error, Result};
use crate::quad::{integrate, QuadOptions};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// A macroscopic space-time point `(t, r)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpaceTimePoint {
    pub t: f64,
    pub r: f64,
}

impl SpaceTimePoint {
    pub fn new(t: f64, r: f64) -> Self {
        SpaceTimePoint { t, r }
    }

    fn check(&self) -> Result<()> {
        if !(self.t >= 0.0) || !self.r.is_finite() || !self.t.is_finite() {
            return domain(format!("space-time point needs t >= 0 and finite r, got {self:?}"));
        }
        Ok(())
    }
}

/// Moments entering the limit covariances.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelMoments {
    pub mu_bar: f64,
    pub sigma0_sq: f64,
    pub sigma1_sq: f64,
    pub kappa: Option<f64>,
}

impl ModelMoments {
    pub fn new(mu_bar: f64, sigma0_sq: f64, sigma1_sq: f64) -> Result<Self> {
        let m = ModelMoments { mu_bar, sigma0_sq, sigma1_sq, kappa: None };
        m.validate()?;
        Ok(m)
    }

    pub fn with_kappa(mut self, kappa: f64) -> Result<Self> {
        self.kappa = Some(kappa);
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mu_bar >= 0.0) || !(self.sigma0_sq >= 0.0) {
            return domain("need mu_bar >= 0 and sigma0_sq >= 0");
        }
        if !(self.sigma1_sq > 0.0) {
            return domain("sigma1_sq must be positive (degenerate walk)");
        }
        if let Some(k) = self.kappa {
            if !(k > 0.0) {
                return domain("kappa must be positive");
            }
        }
        Ok(())
    }
}

/// Exclusion parameters: right rate `p`, left rate `q`, density `rho`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AsepParams {
    pub p: f64,
    pub q: f64,
    pub rho: f64,
}

impl AsepParams {
    /// Asymmetric parameters with `p + q = 1` and `p > q`.
    pub fn new(p: f64, q: f64, rho: f64) -> Result<Self> {
        let a = Self::unchecked(p, q, rho)?;
        if p <= q {
            return domain(format!("asymmetry p > q required, got p={p}, q={q}"));
        }
        Ok(a)
    }

    /// The symmetric control `p = q = 1/2`, used only for comparison runs.
    pub fn symmetric(rho: f64) -> Result<Self> {
        Self::unchecked(0.5, 0.5, rho)
    }

    fn unchecked(p: f64, q: f64, rho: f64) -> Result<Self> {
        if !((p + q - 1.0).abs() <= 1e-12) {
            return domain(format!("rates must satisfy p+q=1, got p={p}, q={q}"));
        }
        if !(0.0..=1.0).contains(&p) || !(0.0..=1.0).contains(&q) {
            return domain("rates must lie in [0,1]");
        }
        if !(0.0..=1.0).contains(&rho) {
            return domain(format!("density must lie in [0,1], got {rho}"));
        }
        Ok(AsepParams { p, q, rho })
    }

    /// The bias `p - q`.
    pub fn bias(&self) -> f64 {
        self.p - self.q
    }
}

/// Flux `(p-q) ρ(1-ρ)`.
pub fn asep_flux(a: &AsepParams) -> f64 {
    a.bias() * a.rho * (1.0 - a.rho)
}

/// Characteristic speed `(p-q)(1-2ρ)`.
pub fn asep_charspeed(a: &AsepParams) -> f64 {
    a.bias() * (1.0 - 2.0 * a.rho)
}

/// Centered Gaussian density with variance `nu2`.
pub fn normal_pdf(x: f64, nu2: f64) -> Result<f64> {
    if !(nu2 > 0.0) {
        return domain(format!("normal_pdf needs positive variance, got {nu2}"));
    }
    Ok((-x * x / (2.0 * nu2)).exp() / (2.0 * PI * nu2).sqrt())
}

/// Distribution function of the centered Gaussian with variance `nu2`.
pub fn normal_cdf(x: f64, nu2: f64) -> Result<f64> {
    if !(nu2 > 0.0) {
        return domain(format!("normal_cdf needs positive variance, got {nu2}"));
    }
    Ok(0.5 * libm::erfc(-x / (2.0 * nu2).sqrt()))
}

/// `Φ` extended to `nu2 = 0` as the step function `1{x >= 0}`.
fn cdf_or_step(x: f64, nu2: f64) -> f64 {
    if nu2 == 0.0 {
        if x >= 0.0 {
            1.0
        } else {
            0.0
        }
    } else {
        0.5 * libm::erfc(-x / (2.0 * nu2).sqrt())
    }
}

/// `Ψ_{ν²}(x) = ν² φ_{ν²}(x) − x (1 − Φ_{ν²}(x))`, and `max(−x, 0)` at `ν² = 0`.
pub fn psi(x: f64, nu2: f64) -> Result<f64> {
    if !(nu2 >= 0.0) || !x.is_finite() {
        return domain(format!("psi needs nu2 >= 0 and finite x, got ({x}, {nu2})"));
    }
    if nu2 == 0.0 {
        return Ok((-x).max(0.0));
    }
    let s = (2.0 * nu2).sqrt();
    let tail = 0.5 * libm::erfc(x / s);
    Ok((nu2 / (2.0 * PI)).sqrt() * (-x * x / (2.0 * nu2)).exp() - x * tail)
}

fn check_pair(a: &SpaceTimePoint, b: &SpaceTimePoint, sigma1_sq: f64) -> Result<()> {
    a.check()?;
    b.check()?;
    if !(sigma1_sq > 0.0) {
        return domain("sigma1_sq must be positive");
    }
    Ok(())
}

/// `Γ₁((s,q),(t,r)) = Ψ_{σ₁²(t+s)}(r−q) − Ψ_{σ₁²|t−s|}(r−q)`.
pub fn gamma1(a: SpaceTimePoint, b: SpaceTimePoint, sigma1_sq: f64) -> Result<f64> {
    check_pair(&a, &b, sigma1_sq)?;
    if a.t == 0.0 || b.t == 0.0 {
        return Ok(0.0);
    }
    // Γ₁ is even in r − q, so |r − q| makes the value exactly symmetric.
    let d = (b.r - a.r).abs();
    Ok(psi(d, sigma1_sq * (a.t + b.t))? - psi(d, sigma1_sq * (a.t - b.t).abs())?)
}

/// Γ₁ from its variance-integral representation
/// `½ ∫_{σ₁²|t−s|}^{σ₁²(t+s)} φ_v(r−q) dv`, evaluated by quadrature.
pub fn gamma1_integral(a: SpaceTimePoint, b: SpaceTimePoint, sigma1_sq: f64) -> Result<f64> {
    check_pair(&a, &b, sigma1_sq)?;
    let d = b.r - a.r;
    let lo = (sigma1_sq * (a.t - b.t).abs()).sqrt();
    let hi = (sigma1_sq * (a.t + b.t)).sqrt();
    let c = 1.0 / (2.0 * PI).sqrt();
    // v = w² removes the v^{-1/2} endpoint singularity.
    integrate(
        |w| if w == 0.0 { 0.0 } else { c * (-d * d / (2.0 * w * w)).exp() },
        lo,
        hi,
        QuadOptions { abs_tol: 1e-12, rel_tol: 1e-12, max_intervals: 20_000 },
    )
}

/// `Γ₂((s,q),(t,r)) = Ψ_{σ₁²s}(−q) + Ψ_{σ₁²t}(r) − Ψ_{σ₁²(t+s)}(r−q)`.
pub fn gamma2(a: SpaceTimePoint, b: SpaceTimePoint, sigma1_sq: f64) -> Result<f64> {
    check_pair(&a, &b, sigma1_sq)?;
    // Evaluate in a canonical order so swapping the points is bit-exact.
    let (u, w) = if (a.t, a.r) <= (b.t, b.r) { (a, b) } else { (b, a) };
    Ok(psi(-u.r, sigma1_sq * u.t)? + psi(w.r, sigma1_sq * w.t)?
        - psi(w.r - u.r, sigma1_sq * (u.t + w.t))?)
}

/// Γ₂ as the Brownian-probability integral
/// `∫_{−∞}^0 P[B_{σ₁²s} > q−x] P[B_{σ₁²t} > r−x] dx + ∫_0^∞ P[B_{σ₁²s} ≤ q−x] P[B_{σ₁²t} ≤ r−x] dx`.
pub fn gamma2_integral(a: SpaceTimePoint, b: SpaceTimePoint, sigma1_sq: f64) -> Result<f64> {
    check_pair(&a, &b, sigma1_sq)?;
    let (vs, vt) = (sigma1_sq * a.t, sigma1_sq * b.t);
    let (q, r) = (a.r, b.r);
    let reach = q.abs() + r.abs() + 40.0 * vs.max(vt).sqrt() + 1.0;
    let opt = QuadOptions { abs_tol: 1e-12, rel_tol: 1e-12, max_intervals: 20_000 };
    let left = |x: f64| cdf_or_step(x - q, vs) * cdf_or_step(x - r, vt);
    let right = |x: f64| cdf_or_step(q - x, vs) * cdf_or_step(r - x, vt);
    let mut total = 0.0;
    for (f_is_left, lo, hi) in [(true, -reach, 0.0), (false, 0.0, reach)] {
        let mut cuts = vec![lo, hi];
        for c in [q, r] {
            if c > lo && c < hi {
                cuts.push(c);
            }
        }
        cuts.sort_by(f64::total_cmp);
        for w in cuts.windows(2) {
            total += if f_is_left {
                integrate(left, w[0], w[1], opt)?
            } else {
                integrate(right, w[0], w[1], opt)?
            };
        }
    }
    Ok(total)
}

/// Limit covariance of the independent-walk current: `μ̄ Γ₁ + σ₀² Γ₂`.
pub fn z_cov(a: SpaceTimePoint, b: SpaceTimePoint, m: &ModelMoments) -> Result<f64> {
    m.validate()?;
    if m.kappa.is_some() {
        return Err(Error::Contract("z_cov takes moments without kappa; use rap_cov".into()));
    }
    Ok(m.mu_bar * gamma1(a, b, m.sigma1_sq)? + m.sigma0_sq * gamma2(a, b, m.sigma1_sq)?)
}

/// Limit covariance of the random average process: `μ̄² κ Γ₁ + σ₀² Γ₂`.
pub fn rap_cov(a: SpaceTimePoint, b: SpaceTimePoint, m: &ModelMoments) -> Result<f64> {
    m.validate()?;
    let kappa = m
        .kappa
        .ok_or_else(|| Error::Contract("rap_cov requires kappa".into()))?;
    Ok(m.mu_bar * m.mu_bar * kappa * gamma1(a, b, m.sigma1_sq)?
        + m.sigma0_sq * gamma2(a, b, m.sigma1_sq)?)
}

/// Fractional-Brownian covariance shape `√s + √t − √|t−s|`.
pub fn fbm_shape(s: f64, t: f64) -> f64 {
    s.sqrt() + t.sqrt() - (t - s).abs().sqrt()
}

/// Poisson-case covariance at `q = r = 0`: `μ̄ σ₁ /√(2π) (√s + √t − √|t−s|)`.
pub fn poisson_fbm_cov(mu_bar: f64, sigma1_sq: f64, s: f64, t: f64) -> f64 {
    mu_bar * sigma1_sq.sqrt() / (2.0 * PI).sqrt() * fbm_shape(s, t)
}

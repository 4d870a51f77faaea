//! Nearest-neighbor random walks in an i.i.d. random environment: speed,
//! crossing times, the quenched centering `Z_nt`, the stationary occupation
//! density, and exact quenched moments of the current.

use crate::error::{domain, Error, Result};
use crate::gauss::SpaceTimePoint;
use crate::iid::floor_robust;
use crate::quad::{integrate, QuadOptions};
use crate::rng::{self, tag, CounterRng};
use rand_distr::{Beta, Distribution, Poisson};
use serde::{Deserialize, Serialize};

const DEPTH_CAP: usize = 10_000;

/// Law of a single environment value `ω₀` (probability of a right step).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum EnvKind {
    /// `a` with probability `p_a`, otherwise `b`.
    TwoPoint { a: f64, b: f64, p_a: f64 },
    Constant { omega: f64 },
    /// `κ + (1−2κ)·Beta(α, β)` with `α, β ≥ 1`.
    ScaledBeta { alpha: f64, beta: f64, kappa: f64 },
}

/// Environment law with its moments precomputed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvLaw {
    pub kind: EnvKind,
    /// Moment exponent slack: `E ρ^{2+ε} < 1` is checked at construction.
    pub eps: f64,
    pub e_rho: f64,
    pub e_rho_2eps: f64,
    pub e_inv_omega: f64,
    pub kappa: f64,
}

impl EnvLaw {
    pub fn new(kind: EnvKind, eps: f64) -> Result<Self> {
        let kappa = match kind {
            EnvKind::TwoPoint { a, b, p_a } => {
                if !(0.0..=1.0).contains(&p_a) {
                    return domain("two-point weight must lie in [0,1]");
                }
                a.min(1.0 - a).min(b.min(1.0 - b))
            }
            EnvKind::Constant { omega } => omega.min(1.0 - omega),
            EnvKind::ScaledBeta { alpha, beta, kappa } => {
                if !(alpha >= 1.0 && beta >= 1.0) {
                    return domain("scaled Beta law needs alpha, beta >= 1");
                }
                kappa
            }
        };
        if !(kappa > 0.0 && kappa < 0.5) {
            return domain(format!("environment must be uniformly elliptic, got kappa {kappa}"));
        }
        if !(eps > 0.0) {
            return domain("moment slack eps must be positive");
        }
        let mut law = EnvLaw { kind, eps, e_rho: 0.0, e_rho_2eps: 0.0, e_inv_omega: 0.0, kappa };
        law.e_rho = law.expect(|w| (1.0 - w) / w)?;
        law.e_rho_2eps = law.expect(|w| ((1.0 - w) / w).powf(2.0 + eps))?;
        law.e_inv_omega = law.expect(|w| 1.0 / w)?;
        if !(law.e_rho_2eps < 1.0) {
            return domain(format!("need E rho^(2+eps) < 1, got {}", law.e_rho_2eps));
        }
        let check = mean_crossing_time(&law)? * env_speed(&law)?;
        if (check - 1.0).abs() > 1e-12 {
            return Err(Error::Numeric(format!("E T1 * v_P = {check}, expected 1")));
        }
        Ok(law)
    }

    /// Default law: ω ∈ {0.7, 0.9} with equal mass.
    pub fn two_point_default() -> Self {
        Self::new(EnvKind::TwoPoint { a: 0.7, b: 0.9, p_a: 0.5 }, 0.5).expect("valid")
    }

    /// `E g(ω₀)`.
    pub fn expect(&self, g: impl Fn(f64) -> f64) -> Result<f64> {
        match self.kind {
            EnvKind::TwoPoint { a, b, p_a } => Ok(p_a * g(a) + (1.0 - p_a) * g(b)),
            EnvKind::Constant { omega } => Ok(g(omega)),
            EnvKind::ScaledBeta { alpha, beta, kappa } => {
                let ln_b = libm::lgamma(alpha) + libm::lgamma(beta) - libm::lgamma(alpha + beta);
                let dens = |x: f64| {
                    if x <= 0.0 || x >= 1.0 {
                        return 0.0;
                    }
                    ((alpha - 1.0) * x.ln() + (beta - 1.0) * (1.0 - x).ln() - ln_b).exp()
                };
                integrate(
                    |x| dens(x) * g(kappa + (1.0 - 2.0 * kappa) * x),
                    0.0,
                    1.0,
                    QuadOptions { abs_tol: 1e-14, rel_tol: 1e-14, max_intervals: 20_000 },
                )
            }
        }
    }

    /// Draw `ω_x` for the environment keyed by `seed`.
    pub fn sample_site(&self, seed: u64, x: i64) -> f64 {
        let mut r = CounterRng::keyed(seed, &[tag::ENV, rng::site_tag(x)]);
        match self.kind {
            EnvKind::TwoPoint { a, b, p_a } => {
                if r.next_unit() < p_a {
                    a
                } else {
                    b
                }
            }
            EnvKind::Constant { omega } => omega,
            EnvKind::ScaledBeta { alpha, beta, kappa } => {
                kappa + (1.0 - 2.0 * kappa) * Beta::new(alpha, beta).expect("validated").sample(&mut r)
            }
        }
    }

    /// Long-run variance rate of the centering: `Var(n^{-1/2} Z_nt) → t · rate`.
    ///
    /// The crossing times `τ_i` are correlated, `Cov(τ_0, τ_k) = (Eρ)^k Var τ`,
    /// and `Z_nt` sums `⌊ntv_P⌋` of them with prefactor `v_P`, so the rate is
    /// `v_P³ Var(τ) (1 + Eρ)/(1 − Eρ)`.
    pub fn z_variance_rate(&self) -> Result<f64> {
        let v = env_speed(self)?;
        let et = mean_crossing_time(self)?;
        let e_rho2 = self.expect(|w| ((1.0 - w) / w).powi(2))?;
        let e_inv2 = self.expect(|w| 1.0 / (w * w))?;
        let e_rho_inv = self.expect(|w| (1.0 - w) / (w * w))?;
        // Stationary τ = 1/ω + ρ τ' with τ' independent of ω.
        let et2 = (e_inv2 + 2.0 * e_rho_inv * et) / (1.0 - e_rho2);
        let var = et2 - et * et;
        Ok(v.powi(3) * var * (1.0 + self.e_rho) / (1.0 - self.e_rho))
    }
}

/// Speed `v_P = (1 − Eρ)/(1 + Eρ)`.
pub fn env_speed(law: &EnvLaw) -> Result<f64> {
    if !(law.e_rho < 1.0) {
        return domain(format!("E rho = {} >= 1: no positive speed", law.e_rho));
    }
    Ok((1.0 - law.e_rho) / (1.0 + law.e_rho))
}

/// Averaged crossing time `𝔼T₁ = E(1/ω)/(1 − Eρ)`.
pub fn mean_crossing_time(law: &EnvLaw) -> Result<f64> {
    if !(law.e_rho < 1.0) {
        return domain(format!("E rho = {} >= 1", law.e_rho));
    }
    Ok(law.e_inv_omega / (1.0 - law.e_rho))
}

/// A realized environment on the sites `[origin, origin + len)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Environment {
    origin: i64,
    omega: Vec<f64>,
    kappa: f64,
}

impl Environment {
    pub fn new(origin: i64, omega: Vec<f64>, kappa: f64) -> Result<Self> {
        if !(kappa > 0.0 && kappa <= 0.5) {
            return domain("ellipticity constant must lie in (0, 1/2]");
        }
        if let Some((i, w)) = omega.iter().enumerate().find(|(_, &w)| !(w >= kappa && w <= 1.0 - kappa)) {
            return domain(format!("omega at site {} is {w}, outside [{kappa}, {}]", origin + i as i64, 1.0 - kappa));
        }
        Ok(Environment { origin, omega, kappa })
    }

    /// Environment without the ellipticity check, for degenerate test cases.
    pub fn unchecked(origin: i64, omega: Vec<f64>) -> Self {
        Environment { origin, omega, kappa: 0.0 }
    }

    pub fn sample(law: &EnvLaw, seed: u64, lo: i64, hi: i64) -> Self {
        let omega = (lo..=hi).map(|x| law.sample_site(seed, x)).collect();
        Environment { origin: lo, omega, kappa: law.kappa }
    }

    pub fn lo(&self) -> i64 {
        self.origin
    }

    pub fn hi(&self) -> i64 {
        self.origin + self.omega.len() as i64 - 1
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    #[inline]
    pub fn omega(&self, x: i64) -> Result<f64> {
        let i = x - self.origin;
        if i < 0 || i >= self.omega.len() as i64 {
            return Err(Error::Window(format!(
                "environment needed at site {x}, defined on [{}, {}]",
                self.lo(),
                self.hi()
            )));
        }
        Ok(self.omega[i as usize])
    }

    fn slice(&self, lo: i64, hi: i64) -> Result<&[f64]> {
        self.omega(lo)?;
        self.omega(hi)?;
        Ok(&self.omega[(lo - self.origin) as usize..=(hi - self.origin) as usize])
    }

    /// The ω values as a JSON array; the origin is not part of the encoding.
    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.omega).expect("floats serialize")
    }

    pub fn from_json(origin: i64, text: &str, kappa: f64) -> Result<Self> {
        let omega: Vec<f64> =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("environment JSON: {e}")))?;
        Self::new(origin, omega, kappa)
    }
}

/// Quenched expected crossing times `τ_i = E_{θ^i ω} T₁` on a site range.
#[derive(Clone, Debug)]
pub struct QuenchedCrossing {
    pub lo: i64,
    pub tau: Vec<f64>,
    /// Largest series depth used.
    pub depth: usize,
    /// Bound on the truncated tail, maximized over the range.
    pub error_bound: f64,
}

impl QuenchedCrossing {
    pub fn get(&self, i: i64) -> f64 {
        self.tau[(i - self.lo) as usize]
    }
}

/// Series `Σ_k (1/ω_{i−k}) Π_{j<k} ρ_{i−j}` truncated once the product is
/// below `tol`. Returns the value, the depth, and the remaining product.
fn tau_series(env: &Environment, i: i64, tol: f64) -> Result<(f64, usize, f64)> {
    let (mut sum, mut prod) = (0.0, 1.0);
    let mut k = 0usize;
    loop {
        let w = env.omega(i - k as i64)?;
        sum += prod / w;
        prod *= (1.0 - w) / w;
        k += 1;
        if prod < tol {
            return Ok((sum, k, prod));
        }
        if k >= DEPTH_CAP {
            return Err(Error::Resource(format!("crossing-time series at site {i} exceeded depth {DEPTH_CAP}")));
        }
    }
}

/// Crossing times on `[a, b]`.
///
/// The tail dropped after depth `k` equals `Π_{j<k} ρ_{i−j} · τ_{i−k}` exactly,
/// so the error bound evaluates that product times a second series for `τ_{i−k}`.
pub fn crossing_times(env: &Environment, a: i64, b: i64, tol: f64) -> Result<QuenchedCrossing> {
    if a > b {
        return Err(Error::Contract("empty site range".into()));
    }
    let mut tau = Vec::with_capacity((b - a + 1) as usize);
    let mut depth = 0;
    let mut err: f64 = 0.0;
    for i in a..=b {
        let (v, k, prod) = tau_series(env, i, tol)?;
        let (rest, _, _) = tau_series(env, i - k as i64, tol)?;
        tau.push(v);
        depth = depth.max(k);
        err = err.max(prod * rest * (1.0 + tol));
    }
    Ok(QuenchedCrossing { lo: a, tau, depth, error_bound: err })
}

/// `Z_nt(ω) = v_P Σ_{i=0}^{⌊ntv_P⌋−1} (τ_i − 𝔼T₁)`.
pub fn z_correction(env: &Environment, law: &EnvLaw, n: u64, t: f64, tol: f64) -> Result<f64> {
    let v = env_speed(law)?;
    let et = mean_crossing_time(law)?;
    let m = floor_robust(n as f64 * t * v);
    if m <= 0 {
        return Ok(0.0);
    }
    let c = crossing_times(env, 0, m - 1, tol)?;
    let mut s = crate::harness::ExactSum::new();
    for x in &c.tau {
        s.add(x - et);
    }
    Ok(v * s.value())
}

/// Stationary density `f(θ^x ω) = (v_P/ω_x)(1 + Σ_{i≥1} Π_{j=1}^{i} ρ_{x+j})`.
pub fn density(env: &Environment, law: &EnvLaw, x: i64, tol: f64) -> Result<f64> {
    let v = env_speed(law)?;
    let (mut sum, mut prod) = (1.0, 1.0);
    let mut i = 1;
    loop {
        let w = env.omega(x + i)?;
        prod *= (1.0 - w) / w;
        sum += prod;
        if prod < tol {
            break;
        }
        i += 1;
        if i as usize > DEPTH_CAP {
            return Err(Error::Resource(format!("density series at site {x} exceeded depth {DEPTH_CAP}")));
        }
    }
    Ok(v / env.omega(x)? * sum)
}

/// Side-by-side summary of `v_P τ_x` and `f(θ^x ω)` over a site range.
#[derive(Clone, Debug, Serialize)]
pub struct ShiftRelation {
    pub mean_v_tau: f64,
    pub mean_f: f64,
    /// Pearson correlation of `v_P τ_x` with `f(θ^{x+lag} ω)` for lags −3..=3.
    pub lag_correlation: Vec<(i64, f64)>,
}

/// Empirical relation between `v_P τ` and `f` under shifts. Diagnostic only.
pub fn shift_relation(env: &Environment, law: &EnvLaw, a: i64, b: i64, tol: f64) -> Result<ShiftRelation> {
    let v = env_speed(law)?;
    let c = crossing_times(env, a - 3, b + 3, tol)?;
    let vt: Vec<f64> = (a..=b).map(|x| v * c.get(x)).collect();
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    let corr = |xs: &[f64], ys: &[f64]| {
        let (mx, my) = (mean(xs), mean(ys));
        let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
        for (x, y) in xs.iter().zip(ys) {
            sxy += (x - mx) * (y - my);
            sxx += (x - mx) * (x - mx);
            syy += (y - my) * (y - my);
        }
        sxy / (sxx * syy).sqrt()
    };
    let mut lag_correlation = Vec::new();
    let mut mean_f = 0.0;
    for lag in -3..=3 {
        let f: Vec<f64> = (a..=b).map(|x| density(env, law, x + lag, tol)).collect::<Result<_>>()?;
        if lag == 0 {
            mean_f = mean(&f);
        }
        lag_correlation.push((lag, corr(&vt, &f)));
    }
    Ok(ShiftRelation { mean_v_tau: mean(&vt), mean_f, lag_correlation })
}

/// Quenched probabilities `P_ω^x(X_steps > threshold)` for every start `x`.
#[derive(Clone, Debug)]
pub struct PassProbs {
    pub steps: u64,
    pub threshold: i64,
    lo: i64,
    probs: Vec<f64>,
}

impl PassProbs {
    pub fn get(&self, x: i64) -> f64 {
        if x < self.lo {
            0.0
        } else if x >= self.lo + self.probs.len() as i64 {
            1.0
        } else {
            self.probs[(x - self.lo) as usize]
        }
    }

    /// Starts whose probability is not trivially 0 or 1.
    pub fn band(&self) -> (i64, i64) {
        (self.lo, self.lo + self.probs.len() as i64 - 1)
    }
}

/// Backward dynamic programming `h_{s+1}(x) = ω_x h_s(x+1) + (1−ω_x) h_s(x−1)`.
///
/// Only the band `(k−s, k+s]` is nontrivial at level `s`, so the cost is
/// `steps²`.
pub fn quenched_pass_probs(env: &Environment, steps: u64, threshold: i64) -> Result<PassProbs> {
    let s = steps as i64;
    let k = threshold;
    if s == 0 {
        return Ok(PassProbs { steps, threshold, lo: k + 1, probs: vec![] });
    }
    // Array over [k − s, k + s + 1]; entry j is site k − s + j.
    let base = k - s;
    let w = env.slice(k - s + 1, k + s)?;
    let len = (2 * s + 2) as usize;
    let mut cur: Vec<f64> = (0..len).map(|j| if base + j as i64 > k { 1.0 } else { 0.0 }).collect();
    let mut next = cur.clone();
    for level in 1..=s {
        // Nontrivial sites k − level + 1 ..= k + level.
        let j0 = (s - level + 1) as usize;
        let j1 = (s + level) as usize;
        for j in j0..=j1 {
            let om = w[j - 1];
            next[j] = om * cur[j + 1] + (1.0 - om) * cur[j - 1];
        }
        std::mem::swap(&mut cur, &mut next);
    }
    Ok(PassProbs { steps, threshold, lo: k - s + 1, probs: cur[1..len - 1].to_vec() })
}

/// General backward expectation `E_ω^x[g(X_steps)]` for `x` in `[lo, hi]`,
/// with `g` given on `[lo − steps, hi + steps]`.
fn backward(env: &Environment, lo: i64, hi: i64, steps: u64, g: &[f64]) -> Result<Vec<f64>> {
    let s = steps as i64;
    debug_assert_eq!(g.len() as i64, hi - lo + 2 * s + 1);
    let base = lo - s;
    let w = env.slice(base, hi + s)?;
    let mut cur = g.to_vec();
    let mut next = cur.clone();
    for level in 1..=s {
        for j in level as usize..(cur.len() - level as usize) {
            let om = w[j];
            next[j] = om * cur[j + 1] + (1.0 - om) * cur[j - 1];
        }
        std::mem::swap(&mut cur, &mut next);
    }
    Ok(cur[s as usize..(s as usize + (hi - lo + 1) as usize)].to_vec())
}

fn observer(law: &EnvLaw, n: u64, p: &SpaceTimePoint) -> Result<(u64, i64)> {
    let v = env_speed(law)?;
    let nt = n as f64 * p.t;
    let steps = floor_robust(nt) as u64;
    let k = floor_robust(floor_robust(nt * v) as f64 + p.r * (n as f64).sqrt());
    Ok((steps, k))
}

/// Quenched mean current for Poisson(μ f(θ^m ω)) occupations:
/// `Σ_{m≤0} E_ω η_m P_ω(X^m > k) − Σ_{m>0} E_ω η_m P_ω(X^m ≤ k)`.
pub fn quenched_current_mean(
    env: &Environment,
    law: &EnvLaw,
    mu: f64,
    n: u64,
    t: f64,
    r: f64,
    tol: f64,
) -> Result<f64> {
    let (steps, k) = observer(law, n, &SpaceTimePoint::new(t, r))?;
    if mu == 0.0 {
        return Ok(0.0);
    }
    let pp = quenched_pass_probs(env, steps, k)?;
    let (lo, hi) = pp.band();
    let mut s = crate::harness::ExactSum::new();
    for m in lo..=hi {
        let f = density(env, law, m, tol)?;
        s.add(if m <= 0 { f * pp.get(m) } else { -f * (1.0 - pp.get(m)) });
    }
    // Starts above the band with m ≤ 0 pass surely.
    for m in (hi + 1)..=0 {
        s.add(density(env, law, m, tol)?);
    }
    // Starts below the band with m > 0 stay at or below k surely.
    for m in 1..lo {
        s.add(-density(env, law, m, tol)?);
    }
    Ok(mu * s.value())
}

/// Exact quenched covariance matrix of the current at several points for
/// Poisson(μ f) occupations: `Σ_{m} μ f_m P_ω(A^m_i ∩ A^m_j)`, with `A` the
/// event counted at each start.
pub fn quenched_current_cov(
    env: &Environment,
    law: &EnvLaw,
    mu: f64,
    n: u64,
    points: &[SpaceTimePoint],
    tol: f64,
) -> Result<Vec<Vec<f64>>> {
    let obs: Vec<(u64, i64)> = points.iter().map(|p| observer(law, n, p)).collect::<Result<_>>()?;
    let m = obs.len();
    let reach = obs.iter().map(|o| o.0 as i64).max().unwrap_or(0);
    let lo = obs.iter().map(|o| o.1).min().unwrap_or(0) - reach;
    let hi = obs.iter().map(|o| o.1).max().unwrap_or(0) + reach;
    let f: Vec<f64> = (lo..=hi).map(|x| density(env, law, x, tol)).collect::<Result<_>>()?;
    let mut cov = vec![vec![0.0; m]; m];
    for i in 0..m {
        for j in 0..=i {
            let (a, b) = if obs[i].0 <= obs[j].0 { (obs[i], obs[j]) } else { (obs[j], obs[i]) };
            let mut total = 0.0;
            for above in [true, false] {
                let ind = |x: i64, k: i64| if (x > k) == above { 1.0 } else { 0.0 };
                // Stage 1: from time a.0 to b.0 with the indicator at b.
                let d = b.0 - a.0;
                let glo = lo - reach - d as i64;
                let ghi = hi + reach + d as i64;
                let g: Vec<f64> = (glo..=ghi).map(|x| ind(x, b.1)).collect();
                let mid = backward(env, lo - reach, hi + reach, d, &g)?;
                // Multiply by the indicator at a, then run a.0 more steps.
                let g2: Vec<f64> =
                    (lo - reach..=hi + reach).zip(&mid).map(|(x, &h)| h * ind(x, a.1)).collect();
                let pre = backward(env, lo - reach + a.0 as i64, hi + reach - a.0 as i64, a.0, &g2)?;
                let off = lo - reach + a.0 as i64;
                for x in lo..=hi {
                    if (x <= 0) == above {
                        total += f[(x - lo) as usize] * pre[(x - off) as usize];
                    }
                }
            }
            cov[i][j] = mu * total;
            cov[j][i] = mu * total;
        }
    }
    Ok(cov)
}

/// Quenched step-variance constant `σ₁² = v_P³ E_P Var_ω T₁`, by an ergodic
/// average over `sites` consecutive sites of a sampled environment.
pub fn quenched_sigma1_sq(law: &EnvLaw, seed: u64, sites: i64) -> Result<f64> {
    let burn = 200;
    let env = Environment::sample(law, seed, -burn, sites);
    // Second moments: ω m_i = 1 + (1−ω)(2τ_{i−1} + 2τ_i + m_{i−1} + 2τ_{i−1}τ_i).
    let (mut tau, mut m2) = (0.0f64, 0.0f64);
    let mut acc = crate::harness::ExactSum::new();
    for x in -burn..=sites {
        let w = env.omega(x)?;
        let t_new = 1.0 / w + (1.0 - w) / w * tau;
        let m_new = (1.0 + (1.0 - w) * (2.0 * tau + 2.0 * t_new + m2 + 2.0 * tau * t_new)) / w;
        tau = t_new;
        m2 = m_new;
        if x > 0 {
            acc.add(m2 - tau * tau);
        }
    }
    Ok(env_speed(law)?.powi(3) * acc.value() / sites as f64)
}

/// One realization of the walker cloud in a fixed environment with
/// Poisson(μ f(θ^m ω)) occupations. Returns `Y_n` at each point.
pub fn simulate_rwre_cloud(
    env: &Environment,
    law: &EnvLaw,
    mu: f64,
    n: u64,
    points: &[SpaceTimePoint],
    seed: u64,
    tol: f64,
) -> Result<Vec<i64>> {
    let obs: Vec<(u64, i64)> = points.iter().map(|p| observer(law, n, p)).collect::<Result<_>>()?;
    let mut y = vec![0i64; obs.len()];
    if mu == 0.0 || obs.is_empty() {
        return Ok(y);
    }
    let reach = obs.iter().map(|o| o.0 as i64).max().unwrap_or(0);
    let lo = obs.iter().map(|o| o.1).min().unwrap_or(0) - reach + 1;
    let hi = obs.iter().map(|o| o.1).max().unwrap_or(0) + reach;
    let mut order: Vec<usize> = (0..obs.len()).collect();
    order.sort_by_key(|&i| obs[i].0);
    let mut pos = vec![0i64; obs.len()];
    for m in lo..=hi {
        let f = density(env, law, m, tol)?;
        let mut r = CounterRng::keyed(seed, &[tag::INIT, rng::site_tag(m)]);
        let count = Poisson::new(mu * f).map_err(|e| Error::Domain(e.to_string()))?.sample(&mut r) as u64;
        for w in 0..count {
            let key = rng::key(seed, &[tag::WALK, rng::site_tag(m), w]);
            let mut x = m;
            let mut done = 0u64;
            for &i in &order {
                while done < obs[i].0 {
                    let u = rng::unit(rng::word(key, done));
                    x += if u < env.omega(x)? { 1 } else { -1 };
                    done += 1;
                }
                pos[i] = x;
            }
            for (i, o) in obs.iter().enumerate() {
                if m <= 0 && pos[i] > o.1 {
                    y[i] += 1;
                } else if m > 0 && pos[i] <= o.1 {
                    y[i] -= 1;
                }
            }
        }
    }
    Ok(y)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn speed_examples() {
        let c = EnvLaw::new(EnvKind::Constant { omega: 0.8 }, 0.5).unwrap();
        assert!((env_speed(&c).unwrap() - 0.6).abs() < 1e-15);
        assert!(EnvLaw::new(EnvKind::Constant { omega: 0.5 }, 0.5).is_err());
        let l = EnvLaw::two_point_default();
        let er = 0.5 * (3.0 / 7.0 + 1.0 / 9.0);
        assert!((env_speed(&l).unwrap() - (1.0 - er) / (1.0 + er)).abs() < 1e-15);
    }

    #[test]
    fn constant_environment_crossing_times() {
        let env = Environment::new(-100, vec![0.8; 201], 0.2).unwrap();
        let c = crossing_times(&env, -10, 10, 1e-12).unwrap();
        for &t in &c.tau {
            assert!((t - 5.0 / 3.0).abs() < 1e-11);
        }
        let law = EnvLaw::new(EnvKind::Constant { omega: 0.8 }, 0.5).unwrap();
        let env = Environment::new(-100, vec![0.8; 3000], 0.2).unwrap();
        let z = z_correction(&env, &law, 100, 3.0, 1e-12).unwrap();
        assert!(z.abs() < 1e-9, "{z}");
    }

    #[test]
    fn tau_at_least_first_term() {
        let law = EnvLaw::two_point_default();
        let env = Environment::sample(&law, 4, -300, 300);
        let c = crossing_times(&env, -50, 50, 1e-12).unwrap();
        for i in -50..=50 {
            assert!(c.get(i) >= 1.0 / env.omega(i).unwrap());
        }
        assert!(c.error_bound < 1e-10);
    }

    #[test]
    fn short_environment_is_an_error() {
        let law = EnvLaw::two_point_default();
        let env = Environment::sample(&law, 4, 0, 10);
        assert!(matches!(crossing_times(&env, 0, 10, 1e-12), Err(Error::Window(_))));
    }

    #[test]
    fn pass_probs_small_cases() {
        let env = Environment::unchecked(-10, vec![1.0; 21]);
        let p = quenched_pass_probs(&env, 0, 2).unwrap();
        assert_eq!((p.get(2), p.get(3)), (0.0, 1.0));
        let p = quenched_pass_probs(&env, 3, 2).unwrap();
        // Deterministic right shift by 3.
        for x in -5..5 {
            assert_eq!(p.get(x), if x + 3 > 2 { 1.0 } else { 0.0 });
        }
        // Two steps over three sites: enumerate the four paths.
        let w = [0.5, 0.3, 0.6, 0.8, 0.5];
        let env = Environment::new(-2, w.to_vec(), 0.2).unwrap();
        let p = quenched_pass_probs(&env, 2, 0).unwrap();
        // From 0: paths RR (+2), RL (0), LR (0), LL (−2); only RR ends above 0.
        let rr = w[2] * w[3];
        assert!((p.get(0) - rr).abs() < 1e-15);
        assert!((p.get(-1) - w[1] * w[2]).abs() < 1e-15);
        assert_eq!(p.get(-2), 0.0);
    }

    #[test]
    fn json_roundtrip() {
        let law = EnvLaw::two_point_default();
        let env = Environment::sample(&law, 9, -5, 5);
        let back = Environment::from_json(-5, &env.to_json(), law.kappa).unwrap();
        assert_eq!(env, back);
        assert!(Environment::from_json(0, "[0.95]", 0.1).is_err());
    }

    #[test]
    fn zero_density_means_zero_current() {
        let law = EnvLaw::two_point_default();
        let env = Environment::sample(&law, 1, -500, 500);
        assert_eq!(quenched_current_mean(&env, &law, 0.0, 100, 1.0, 0.0, 1e-12).unwrap(), 0.0);
        let y = simulate_rwre_cloud(&env, &law, 0.0, 100, &[SpaceTimePoint::new(1.0, 0.0)], 3, 1e-12).unwrap();
        assert_eq!(y, vec![0]);
    }
}

//! Totally asymmetric zero-range process.
//!
//! Site `i` carries a rate-1 Poisson clock with uniform marks; at an event
//! with mark `U` one particle moves `i → i+1` iff `U < g(η_i)`. Coupled
//! processes read the same clocks and marks. The discrepancies `X` of an
//! ordered pair `(ω, η)` are kept in label order by always moving the
//! highest label at a site, and two label processes `y ≤ z` ride on them.
//!
//! Influence travels only to the right, so a window `[lo, hi]` needs a left
//! margin for the contamination front started at `lo` and a right margin for
//! whatever is measured; particles leaving `hi` are simply dropped.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::harness::{fit_slope, run_replicas, Accumulator, Measured, SeedPolicy, SlopeFit};
use crate::iid::floor_robust;
use crate::real::Real;
use crate::rng::{self, tag};

/// Largest occupation inspected when validating a rate function.
pub const VALIDATION_CAP: u32 = 1000;

/// Jump-rate families accepted in configurations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case", deny_unknown_fields)]
pub enum RateFamily {
    /// `g(k) = 1 − exp(−a k^b)`.
    ExpSaturating { a: f64, b: f64 },
    /// `g(k) = 1` for `k ≥ 1`.
    Constant,
    /// `g(1..=n)` listed; constant at the last value afterwards.
    Table { values: Vec<f64> },
}

/// A validated jump-rate function with its concavity ratio.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateFn {
    pub family: RateFamily,
    /// `sup_k (g(k+1) − g(k)) / (g(k) − g(k−1))` over `1 ≤ k < VALIDATION_CAP`.
    pub r: f64,
    /// `lim g(k)`, the radius of convergence of the fugacity.
    pub sup: f64,
    table: Vec<f64>,
}

impl RateFn {
    /// Validate `g` and compute its ratio; fails if `declared_r` is exceeded.
    pub fn new(family: RateFamily, declared_r: Option<f64>) -> Result<Self> {
        match &family {
            RateFamily::ExpSaturating { a, b } => {
                if !(*a > 0.0 && *b >= 1.0 && a.is_finite() && b.is_finite()) {
                    return domain("exp-saturating rate needs a > 0 and b >= 1");
                }
            }
            RateFamily::Constant => {}
            RateFamily::Table { values } => {
                if values.is_empty() {
                    return domain("rate table needs at least g(1)");
                }
            }
        }
        let eval = |k: u32| -> f64 {
            if k == 0 {
                return 0.0;
            }
            match &family {
                RateFamily::ExpSaturating { a, b } => -(-a * (k as f64).powf(*b)).exp_m1(),
                RateFamily::Constant => 1.0,
                RateFamily::Table { values } => values[(k as usize - 1).min(values.len() - 1)],
            }
        };
        let table: Vec<f64> = (0..=VALIDATION_CAP + 1).map(eval).collect();
        // Increments taken on `1 − g` keep precision where g is near 1.
        let gap = |k: usize| -> f64 {
            match &family {
                RateFamily::ExpSaturating { a, b } => {
                    let c = |k: usize| if k == 0 { 1.0 } else { (-a * (k as f64).powf(*b)).exp() };
                    c(k) - c(k + 1)
                }
                _ => table[k + 1] - table[k],
            }
        };
        for k in 1..=VALIDATION_CAP as usize {
            let gk = table[k];
            if !(gk > 0.0 && gk <= 1.0) {
                return domain(format!("rate must satisfy 0 < g(k) <= 1, got g({k}) = {gk}"));
            }
            if table[k + 1] < gk {
                return domain(format!("rate must be nondecreasing, g({}) < g({k})", k + 1));
            }
        }
        let mut r: f64 = 0.0;
        for k in 1..VALIDATION_CAP as usize {
            let num = gap(k);
            let den = gap(k - 1);
            if den > 1e-280 {
                r = r.max(num / den);
            } else if den > 0.0 {
                // Increments this small carry no usable ratio.
            } else if num > 0.0 {
                return domain(format!("rate increment grows from zero at k={k}; g is not concave"));
            }
        }
        if let Some(d) = declared_r {
            if !(d > 0.0 && d <= 1.0) {
                return domain("declared concavity ratio must lie in (0,1]");
            }
            if r > d + 1e-12 {
                return domain(format!("concavity ratio {r} exceeds the declared {d}"));
            }
        }
        let sup = match &family {
            RateFamily::ExpSaturating { .. } | RateFamily::Constant => 1.0,
            RateFamily::Table { values } => *values.last().unwrap(),
        };
        Ok(RateFn { family, r, sup, table })
    }

    /// `g(k) = 1 − e^{−k}`, the running example.
    pub fn exp_saturating(a: f64, b: f64) -> Result<Self> {
        Self::new(RateFamily::ExpSaturating { a, b }, None)
    }

    #[inline]
    pub fn g(&self, k: u32) -> f64 {
        match self.table.get(k as usize) {
            Some(&v) => v,
            None => self.sup,
        }
    }
}

/// The product-measure marginal `ν₀^ρ(k) = e^{θk} / (Z_θ g(k)!)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZrpMeasure {
    pub rho: f64,
    pub theta: f64,
    /// Fugacity `e^θ`, which equals the flux `E g(η_0)`.
    pub phi: f64,
    /// Normalizer over the retained support.
    pub z_theta: f64,
    pub pmf: Vec<f64>,
    /// Upper bound on the mass dropped beyond the support.
    pub tail_mass: f64,
    cdf: Vec<f64>,
}

fn weights(g: &RateFn, phi: f64, tol: f64) -> Result<(Vec<f64>, f64)> {
    const MAX_SUPPORT: usize = 2_000_000;
    let mut w = vec![1.0];
    let mut total = 1.0;
    let mut k = 0u32;
    loop {
        let ratio = phi / g.g(k + 1);
        let last = *w.last().unwrap();
        // Weights beyond k shrink at least geometrically with this ratio.
        if ratio < 1.0 && k > 0 {
            let bound = last * ratio / (1.0 - ratio);
            if bound <= tol * total {
                return Ok((w, bound / total));
            }
        }
        if w.len() > MAX_SUPPORT {
            return Err(Error::Resource("occupation support exceeds two million states".into()));
        }
        k += 1;
        let next = last * ratio;
        w.push(next);
        total += next;
        if !total.is_finite() {
            return Err(Error::Numeric("weights overflow".into()));
        }
    }
}

fn mean_of(pmf: &[f64]) -> f64 {
    pmf.iter().enumerate().map(|(k, p)| k as f64 * p).sum()
}

impl ZrpMeasure {
    fn at(g: &RateFn, phi: f64) -> Result<Self> {
        let (w, tail) = weights(g, phi, 1e-13)?;
        let z: f64 = w.iter().sum();
        let pmf: Vec<f64> = w.iter().map(|x| x / z).collect();
        let mut cdf = Vec::with_capacity(pmf.len());
        let mut c = 0.0;
        for p in &pmf {
            c += p;
            cdf.push(c);
        }
        Ok(ZrpMeasure { rho: mean_of(&pmf), theta: phi.ln(), phi, z_theta: z, pmf, tail_mass: tail, cdf })
    }

    pub fn mean(&self) -> f64 {
        mean_of(&self.pmf)
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.pmf.iter().enumerate().map(|(k, p)| (k as f64 - m).powi(2) * p).sum()
    }

    /// `H(ρ) = E g(η_0) = e^θ`.
    pub fn flux(&self) -> f64 {
        self.phi
    }

    /// `V^ρ = H'(ρ) = e^θ / Var(η_0)`.
    pub fn char_speed(&self) -> f64 {
        self.phi / self.variance()
    }

    /// Inverse-CDF sample from a uniform.
    pub fn quantile(&self, u: f64) -> u32 {
        self.cdf.partition_point(|&c| c <= u).min(self.pmf.len() - 1) as u32
    }
}

/// Solve `ρ(θ) = rho` by bisection on the fugacity.
pub fn invariant_measure(g: &RateFn, rho: f64) -> Result<ZrpMeasure> {
    if !(rho > 0.0 && rho.is_finite()) {
        return domain(format!("density must be positive and finite, got {rho}"));
    }
    let mut lo = 0.0;
    let mut hi = g.sup;
    // The highest fugacity whose support stays manageable.
    let top = hi * (1.0 - 1e-9);
    let at_top = ZrpMeasure::at(g, top).map(|m| m.rho).unwrap_or(f64::INFINITY);
    if at_top < rho {
        return domain(format!("density {rho} unattainable: attainable range is (0, {at_top:.6})"));
    }
    hi = top;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let m = ZrpMeasure::at(g, mid)?;
        if m.rho < rho {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-16 * hi {
            break;
        }
    }
    let m = ZrpMeasure::at(g, 0.5 * (lo + hi))?;
    if (m.rho - rho).abs() > 1e-10 * rho.max(1.0) {
        return Err(Error::Numeric(format!("density inversion stalled at {} for target {rho}", m.rho)));
    }
    Ok(m)
}

/// `ν̂₀^ρ(k) = Var⁻¹ Σ_{m>k} (m−ρ) ν₀^ρ(m)` with `F(k) = Var ν̂(k)/ν(k)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HatMeasure {
    pub pmf: Vec<f64>,
    /// `F(0), F(1), …`; `F(−1) = 0` is implicit.
    pub f: Vec<f64>,
    pub var: f64,
    cdf: Vec<f64>,
}

impl HatMeasure {
    pub fn from_measure(nu: &ZrpMeasure) -> Result<Self> {
        let var = nu.variance();
        if !(var > 0.0) {
            return domain("hat measure needs a nondegenerate occupation law");
        }
        let rho = nu.mean();
        let n = nu.pmf.len();
        let mut tail = vec![0.0; n];
        let mut acc = 0.0;
        for k in (0..n).rev() {
            tail[k] = acc;
            acc += (k as f64 - rho) * nu.pmf[k];
        }
        let pmf: Vec<f64> = tail.iter().map(|t| (t / var).max(0.0)).collect();
        let f = (0..n).map(|k| if nu.pmf[k] > 0.0 { tail[k] / nu.pmf[k] } else { 0.0 }).collect();
        let mut cdf = Vec::with_capacity(n);
        let mut c = 0.0;
        for p in &pmf {
            c += p;
            cdf.push(c);
        }
        Ok(HatMeasure { pmf, f, var, cdf })
    }

    /// `F(k)` with `F(−1) = 0`.
    pub fn f_at(&self, k: i64) -> f64 {
        if k < 0 {
            0.0
        } else {
            self.f.get(k as usize).copied().unwrap_or(0.0)
        }
    }

    pub fn quantile(&self, u: f64) -> u32 {
        let total = *self.cdf.last().unwrap();
        self.cdf.partition_point(|&c| c <= u * total).min(self.pmf.len() - 1) as u32
    }
}

pub fn hat_measure(g: &RateFn, rho: f64) -> Result<HatMeasure> {
    HatMeasure::from_measure(&invariant_measure(g, rho)?)
}

/// What a site event does in the coupled pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Jump {
    /// `U < g(η_i)`: both processes move a particle.
    First,
    /// `g(η_i) ≤ U < g(ω_i)`: the highest-labelled discrepancy moves.
    Second,
    Idle,
}

/// Mark partition of one site event with widths.
pub fn jump_bands<R: Real>(g_eta: R, g_omega: R) -> [(Jump, R); 3] {
    [(Jump::First, g_eta), (Jump::Second, g_omega - g_eta), (Jump::Idle, R::one() - g_omega)]
}

/// `g` at the four occupations the label rules read at a site.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SiteRates<R> {
    pub g_eta: R,
    pub g_eta1: R,
    pub g_omega1: R,
    pub g_omega: R,
}

impl SiteRates<f64> {
    pub fn at(g: &RateFn, omega: u32, eta: u32) -> Self {
        SiteRates { g_eta: g.g(eta), g_eta1: g.g(eta + 1), g_omega1: g.g(omega.saturating_sub(1)), g_omega: g.g(omega) }
    }
}

/// `y' ∈ {a, b}` after a jump touching its site.
pub fn y_refresh<R: Real>(s: &SiteRates<R>, a: i64, b: i64) -> [(R, i64); 2] {
    let d = s.g_omega - s.g_eta;
    if d.is_zero() {
        return [(R::one(), a), (R::zero(), b)];
    }
    [((s.g_omega1 - s.g_eta) / d, a), ((s.g_omega - s.g_omega1) / d, b)]
}

/// `z' ∈ {b−1, b}` after a jump touching its site.
pub fn z_refresh<R: Real>(s: &SiteRates<R>, b: i64) -> [(R, i64); 2] {
    let d = s.g_omega - s.g_eta;
    if d.is_zero() {
        return [(R::zero(), b - 1), (R::one(), b)];
    }
    [((s.g_omega - s.g_eta1) / d, b - 1), ((s.g_eta1 - s.g_eta) / d, b)]
}

/// Joint refresh when both labels share the site. The middle probability is
/// nonnegative exactly when `g` is concave between `η_i` and `ω_i`.
pub fn joint_refresh<R: Real>(s: &SiteRates<R>, a: i64, b: i64) -> std::result::Result<[(R, (i64, i64)); 3], R> {
    let d = s.g_omega - s.g_eta;
    if d.is_zero() {
        return Ok([(R::zero(), (a, b - 1)), (R::one(), (a, b)), (R::zero(), (b, b))]);
    }
    let p1 = (s.g_omega - s.g_eta1) / d;
    let p3 = (s.g_omega - s.g_omega1) / d;
    let p2 = (s.g_eta1 - s.g_eta) / d - p3;
    if p2 < R::zero() {
        return Err(p2);
    }
    Ok([(p1, (a, b - 1)), (p2, (a, b)), (p3, (b, b))])
}

/// Move a tracked label across a second-class jump from `i` to `j = i+1`;
/// `d` is `ω_i − η_i` before the jump. The top label at `i` is the one that
/// moves and becomes the lowest at `j`.
pub fn follow_second_class(t: &mut Tracked, i: usize, j: usize, d: i64) {
    if t.site == i && t.label == t.a + d - 1 {
        t.site = j;
        t.a = t.label;
    } else if t.site == j {
        t.a -= 1;
    }
}

fn pick<T: Copy, const N: usize>(v: f64, outcomes: &[(f64, T); N]) -> T {
    let mut c = 0.0;
    for &(p, o) in outcomes.iter() {
        c += p;
        if v < c {
            return o;
        }
    }
    // Rounding left a sliver above the last cell: take the last live outcome.
    outcomes.iter().rev().find(|o| o.0 > 0.0).unwrap_or(&outcomes[N - 1]).1
}

/// Spatial window `lo..=hi`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ZrpWindow {
    pub lo: i64,
    pub hi: i64,
}

impl ZrpWindow {
    /// Margin `⌈t + 10√t⌉ + 2` on both sides of `[a, b]`: fronts and tagged
    /// particles move right at rate at most 1.
    pub fn covering(a: i64, b: i64, t: f64) -> Self {
        let m = (t + 10.0 * t.sqrt()).ceil() as i64 + 2;
        ZrpWindow { lo: a.min(b) - m, hi: a.max(b) + m }
    }

    pub fn len(&self) -> usize {
        (self.hi - self.lo + 1).max(0) as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, x: i64) -> Option<usize> {
        (x >= self.lo && x <= self.hi).then(|| (x - self.lo) as usize)
    }

    pub fn site(&self, i: usize) -> i64 {
        self.lo + i as i64
    }
}

/// A labelled position: the label, its site index, and the lowest label at
/// that site.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tracked {
    pub label: i64,
    pub site: usize,
    pub a: i64,
}

/// Meter on one member: current across `(1/2,0) → (x+1/2,t)` and the
/// compensator `∫ g(η_x) ds`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZrpMeterSpec {
    pub member: usize,
    pub x: i64,
    pub t: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZrpReading {
    pub spec: ZrpMeterSpec,
    pub current: i64,
    pub flux: i64,
    pub compensator: f64,
}

#[derive(Clone, Debug)]
struct ZMeter {
    spec: ZrpMeterSpec,
    site: usize,
    offset: i64,
    flux: i64,
    comp: f64,
    last: f64,
    done: Option<ZrpReading>,
}

/// Basic coupling of zero-range processes with an optional labelled pair.
#[derive(Clone, Debug)]
pub struct ZrpCoupled {
    g: RateFn,
    window: ZrpWindow,
    members: Vec<Vec<u32>>,
    initial: Vec<Vec<u32>>,
    pair: Option<(usize, usize)>,
    y: Option<Tracked>,
    z: Option<Tracked>,
    time: f64,
    keys: Vec<u64>,
    label_keys: Vec<u64>,
    k: Vec<u64>,
    next: Vec<f64>,
    slab: Vec<(f64, f64, u32, u64)>,
    slab_pos: usize,
    slab_end: f64,
    front: usize,
    protected: Vec<(usize, usize, f64)>,
    meters: Vec<ZMeter>,
    next_meter: f64,
    events: u64,
    refreshes: u64,
}

impl ZrpCoupled {
    pub fn new(g: &RateFn, window: ZrpWindow, members: Vec<Vec<u32>>, seed: u64) -> Result<Self> {
        let n = window.len();
        if n < 2 {
            return domain("window needs at least two sites");
        }
        if members.is_empty() || members.iter().any(|m| m.len() != n) {
            return Err(Error::Contract("members must cover the window".into()));
        }
        let keys: Vec<u64> = (0..n).map(|i| rng::key(seed, &[tag::SITE_MAIN, rng::site_tag(window.site(i))])).collect();
        let label_keys = (0..n).map(|i| rng::key(seed, &[tag::LABEL, rng::site_tag(window.site(i))])).collect();
        let next = keys.iter().map(|&k| rng::exp1(rng::word(k, 0))).collect();
        Ok(ZrpCoupled {
            g: g.clone(),
            window,
            initial: members.clone(),
            members,
            pair: None,
            y: None,
            z: None,
            time: 0.0,
            keys,
            label_keys,
            k: vec![0; n],
            next,
            slab: Vec::new(),
            slab_pos: 0,
            slab_end: 0.0,
            front: 0,
            protected: Vec::new(),
            meters: Vec::new(),
            next_meter: f64::INFINITY,
            events: 0,
            refreshes: 0,
        })
    }

    /// Lowest label at each site when the lowest discrepancy at the origin
    /// carries label 0.
    fn lowest_labels(&self, up: usize, low: usize) -> Vec<i64> {
        let d: Vec<i64> = (0..self.window.len()).map(|i| self.members[up][i] as i64 - self.members[low][i] as i64).collect();
        let mut a = vec![0i64; d.len()];
        let mut s = 0;
        for i in 0..d.len() {
            a[i] = s;
            s += d[i];
        }
        let shift = self.window.index(0).map_or(0, |o| a[o]);
        a.iter().map(|x| x - shift).collect()
    }

    /// Label the discrepancies of `members[pair.0] − members[pair.1]` and
    /// place `y` and `z` on the given labels.
    pub fn with_labels(mut self, pair: (usize, usize), y: Option<i64>, z: Option<i64>) -> Result<Self> {
        let (up, low) = pair;
        if up >= self.members.len() || low >= self.members.len() || up == low {
            return Err(Error::Contract("labels need a designated pair (upper, lower)".into()));
        }
        if self.members[up].iter().zip(&self.members[low]).any(|(a, b)| a < b) {
            return Err(Error::Contract("the labelled pair must satisfy omega >= eta".into()));
        }
        self.pair = Some(pair);
        let a = self.lowest_labels(up, low);
        let locate = |label: i64| -> Result<Tracked> {
            for i in 0..a.len() {
                let d = self.members[up][i] as i64 - self.members[low][i] as i64;
                if d > 0 && label >= a[i] && label < a[i] + d {
                    return Ok(Tracked { label, site: i, a: a[i] });
                }
            }
            Err(Error::Contract(format!("no discrepancy carries label {label}")))
        };
        self.y = y.map(locate).transpose()?;
        self.z = z.map(locate).transpose()?;
        if let (Some(y), Some(z)) = (self.y, self.z) {
            if y.label > z.label {
                return Err(Error::Contract("labels must satisfy y <= z".into()));
            }
        }
        self.check_clear()?;
        Ok(self)
    }

    pub fn protect(&mut self, lo: i64, hi: i64, until: f64) -> Result<()> {
        let (Some(a), Some(b)) = (self.window.index(lo), self.window.index(hi)) else {
            return Err(Error::Window(format!("probe range [{lo}, {hi}] outside the window")));
        };
        self.protected.push((a, b, until));
        self.check_clear()
    }

    pub fn add_meter(&mut self, spec: ZrpMeterSpec) -> Result<usize> {
        if spec.member >= self.members.len() {
            return Err(Error::Contract(format!("no member {}", spec.member)));
        }
        let (Some(site), Some(_), Some(_)) =
            (self.window.index(spec.x), self.window.index(spec.x.min(0)), self.window.index(spec.x.max(1) + 1))
        else {
            return Err(Error::Window(format!("meter at x={} does not fit the window", spec.x)));
        };
        let occ0 = &self.initial[spec.member];
        let at = |y: i64| occ0[self.window.index(y).unwrap()] as i64;
        let offset = if spec.x >= 0 { -(1..=spec.x).map(at).sum::<i64>() } else { (spec.x + 1..=0).map(at).sum::<i64>() };
        self.meters.push(ZMeter { spec, site, offset, flux: 0, comp: 0.0, last: self.time, done: None });
        self.protected.push((site, site + 1, spec.t));
        self.next_meter = self.next_meter.min(spec.t);
        self.check_clear()?;
        Ok(self.meters.len() - 1)
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn window(&self) -> ZrpWindow {
        self.window
    }

    pub fn member(&self, m: usize) -> &[u32] {
        &self.members[m]
    }

    pub fn occupation(&self, m: usize, x: i64) -> Option<u32> {
        self.window.index(x).map(|i| self.members[m][i])
    }

    pub fn y(&self) -> Option<Tracked> {
        self.y
    }

    pub fn z(&self) -> Option<Tracked> {
        self.z
    }

    /// Lattice position of `X_y`.
    pub fn y_site(&self) -> Option<i64> {
        self.y.map(|t| self.window.site(t.site))
    }

    pub fn z_site(&self) -> Option<i64> {
        self.z.map(|t| self.window.site(t.site))
    }

    pub fn events(&self) -> u64 {
        self.events
    }

    pub fn refreshes(&self) -> u64 {
        self.refreshes
    }

    pub fn reading(&self, m: usize) -> Option<ZrpReading> {
        self.meters.get(m).and_then(|m| m.done)
    }

    /// `ω − δ_{X_y}` for the labelled pair.
    pub fn omega_minus(&self) -> Option<Vec<u32>> {
        let (up, _) = self.pair?;
        let y = self.y?;
        let mut v = self.members[up].clone();
        v[y.site] -= 1;
        Some(v)
    }

    /// `η + δ_{X_z}` for the labelled pair.
    pub fn eta_plus(&self) -> Option<Vec<u32>> {
        let (_, low) = self.pair?;
        let z = self.z?;
        let mut v = self.members[low].clone();
        v[z.site] += 1;
        Some(v)
    }

    /// Recompute label bookkeeping from scratch and compare.
    pub fn check(&self) -> Result<()> {
        let Some((up, low)) = self.pair else {
            return Ok(());
        };
        if self.members[up].iter().zip(&self.members[low]).any(|(a, b)| a < b) {
            return Err(Error::Numeric("labelled pair lost its order".into()));
        }
        // The lowest label is fixed at time 0: nothing enters across the left edge.
        let base = {
            let o = self.window.index(0).unwrap_or(0);
            -(0..o).map(|i| self.initial[up][i] as i64 - self.initial[low][i] as i64).sum::<i64>()
        };
        let mut a = Vec::with_capacity(self.window.len());
        let mut s = base;
        for i in 0..self.window.len() {
            a.push(s);
            s += self.members[up][i] as i64 - self.members[low][i] as i64;
        }
        for t in [self.y, self.z].into_iter().flatten() {
            let d = self.members[up][t.site] as i64 - self.members[low][t.site] as i64;
            if t.a != a[t.site] || t.label < t.a || t.label >= t.a + d {
                return Err(Error::Numeric(format!("label {} inconsistent at site {}", t.label, self.window.site(t.site))));
            }
        }
        Ok(())
    }

    pub fn run_until(&mut self, t_end: f64) -> Result<()> {
        if t_end < self.time {
            return Err(Error::Contract("cannot run backwards".into()));
        }
        loop {
            if self.slab_pos == self.slab.len() {
                if self.slab_end > t_end {
                    break;
                }
                self.refill();
                continue;
            }
            let (t, u, i, k) = self.slab[self.slab_pos];
            if t > t_end {
                break;
            }
            self.slab_pos += 1;
            if t > self.next_meter {
                self.settle(t, false);
            }
            self.time = t;
            self.events += 1;
            self.fire(i as usize, u, k)?;
        }
        self.time = t_end;
        self.settle(t_end, true);
        Ok(())
    }

    fn refill(&mut self) {
        self.slab.clear();
        self.slab_pos = 0;
        self.slab_end += 1.0;
        let end = self.slab_end;
        for i in 0..self.keys.len() {
            while self.next[i] < end {
                let k = self.k[i];
                let key = self.keys[i];
                self.slab.push((self.next[i], rng::unit(rng::word(key, 2 * k + 1)), i as u32, k));
                self.k[i] = k + 1;
                self.next[i] += rng::exp1(rng::word(key, 2 * k + 2));
            }
        }
        self.slab.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.2.cmp(&b.2)));
    }

    fn fire(&mut self, i: usize, u: f64, k: u64) -> Result<()> {
        let n = self.members[0].len();
        let j = i + 1;
        // The pair's view before the jump.
        let pre = self.pair.map(|(up, low)| (self.members[up][i], self.members[low][i]));
        let mut moved = 0u32;
        for (m, occ) in self.members.iter_mut().enumerate() {
            if u < self.g.g(occ[i]) {
                occ[i] -= 1;
                if j < n {
                    occ[j] += 1;
                }
                moved |= 1 << m;
            }
        }
        if moved != 0 && !self.meters.is_empty() {
            self.touch_meters(i, moved);
        }
        if i == self.front {
            self.front += 1;
            self.check_clear()?;
        }
        let (Some((up, low)), Some((w, e))) = (self.pair, pre) else {
            return Ok(());
        };
        let pair_moved = moved & ((1 << up) | (1 << low)) != 0;
        if !pair_moved {
            return Ok(());
        }
        debug_assert!(self.members[up][i] >= self.members[low][i]);
        if u >= self.g.g(e) && u < self.g.g(w) {
            for t in [&mut self.y, &mut self.z].into_iter().flatten() {
                follow_second_class(t, i, j, w as i64 - e as i64);
            }
        }
        self.refresh(i, k, 0)?;
        if j < n {
            self.refresh(j, k, 1)?;
        }
        self.check_clear()
    }

    /// Refresh labels sitting at site `s` after a jump that changed it.
    fn refresh(&mut self, s: usize, k: u64, slot: u64) -> Result<()> {
        let (up, low) = self.pair.unwrap();
        let y_here = self.y.is_some_and(|t| t.site == s);
        let z_here = self.z.is_some_and(|t| t.site == s);
        if !y_here && !z_here {
            return Ok(());
        }
        let (w, e) = (self.members[up][s], self.members[low][s]);
        let rates = SiteRates::at(&self.g, w, e);
        // The uniforms of the event at source site i live on i's label stream.
        let src = if slot == 0 { s } else { s - 1 };
        let v = rng::unit(rng::word(self.label_keys[src], 4 * k + 2 * slot));
        let v2 = rng::unit(rng::word(self.label_keys[src], 4 * k + 2 * slot + 1));
        let a = if let Some(t) = self.y.filter(|t| t.site == s) { t.a } else { self.z.unwrap().a };
        let b = a + w as i64 - e as i64 - 1;
        self.refreshes += 1;
        if y_here && z_here {
            let out = joint_refresh(&rates, a, b).map_err(|p2| {
                Error::Domain(format!("negative middle probability {p2} at omega_i={w}, eta_i={e}: g is not concave here"))
            })?;
            let out = out.map(|(p, o)| (p.max(0.0), o));
            let (ny, nz) = pick(v, &out);
            self.y.as_mut().unwrap().label = ny;
            self.z.as_mut().unwrap().label = nz;
        } else if y_here {
            self.y.as_mut().unwrap().label = pick(v, &y_refresh(&rates, a, b));
        } else {
            self.z.as_mut().unwrap().label = pick(v2, &z_refresh(&rates, b));
        }
        if let (Some(y), Some(z)) = (self.y, self.z) {
            if y.label > z.label {
                return Err(Error::Numeric(format!("label order lost: y={} > z={}", y.label, z.label)));
            }
        }
        Ok(())
    }

    fn touch_meters(&mut self, i: usize, moved: u32) {
        let now = self.time;
        for m in &mut self.meters {
            if m.done.is_some() || moved & (1 << m.spec.member) == 0 {
                continue;
            }
            if i + 1 == m.site || i == m.site {
                let occ = &self.members[m.spec.member];
                // Occupation of the meter site before this jump.
                let before = if i == m.site { occ[i] + 1 } else { occ[m.site] - 1 };
                m.comp += self.g.g(before) * (now - m.last);
                m.last = now;
                if i == m.site {
                    m.flux += 1;
                }
            }
        }
    }

    fn settle(&mut self, t: f64, inclusive: bool) {
        let mut next = f64::INFINITY;
        for m in &mut self.meters {
            if m.done.is_some() {
                continue;
            }
            if m.spec.t < t || (inclusive && m.spec.t <= t) {
                let g_now = self.g.g(self.members[m.spec.member][m.site]);
                let comp = m.comp + g_now * (m.spec.t - m.last);
                m.done = Some(ZrpReading { spec: m.spec, current: m.flux + m.offset, flux: m.flux, compensator: comp });
            } else {
                next = next.min(m.spec.t);
            }
        }
        self.next_meter = next;
    }

    fn check_clear(&self) -> Result<()> {
        let n = self.window.len();
        for t in [self.y, self.z].into_iter().flatten() {
            if t.site <= self.front || t.site + 1 >= n {
                return Err(Error::Window(format!(
                    "label at site {} left the exact zone at t={:.3}",
                    self.window.site(t.site),
                    self.time
                )));
            }
        }
        for &(a, b, until) in &self.protected {
            if until >= self.time && (a <= self.front || b >= n) {
                return Err(Error::Window(format!(
                    "sites [{}, {}] left the exact zone at t={:.3}",
                    self.window.site(a),
                    self.window.site(b),
                    self.time
                )));
            }
        }
        Ok(())
    }
}

fn site_uniforms(window: ZrpWindow, seed: u64) -> Vec<f64> {
    let k = rng::key(seed, &[tag::INIT]);
    (0..window.len()).map(|i| rng::unit(rng::word(k, rng::site_tag(window.site(i))))).collect()
}

/// Product `ν^ρ` configuration, keyed by site.
pub fn sample_stationary(nu: &ZrpMeasure, window: ZrpWindow, seed: u64) -> Vec<u32> {
    site_uniforms(window, seed).into_iter().map(|u| nu.quantile(u)).collect()
}

/// Run a single process to `horizon`.
pub fn zrp_run(g: &RateFn, initial: Vec<u32>, window: ZrpWindow, horizon: f64, seed: u64) -> Result<ZrpCoupled> {
    let mut c = ZrpCoupled::new(g, window, vec![initial], seed)?;
    c.run_until(horizon)?;
    Ok(c)
}

/// The `P̂^ρ` pair: `η ~ ν̂` at the origin and `ν` elsewhere, `η⁺ = η + δ_0`,
/// plus the stationary `ω` that agrees with `η` off the origin. Members are
/// `[η⁺, η, ω]`; `y` tracks `Q`.
pub fn zrp_couple(g: &RateFn, rho: f64, window: ZrpWindow, seed: u64) -> Result<ZrpCoupled> {
    let nu = invariant_measure(g, rho)?;
    let hat = HatMeasure::from_measure(&nu)?;
    zrp_couple_with(g, &nu, &hat, window, seed)
}

fn zrp_couple_with(g: &RateFn, nu: &ZrpMeasure, hat: &HatMeasure, window: ZrpWindow, seed: u64) -> Result<ZrpCoupled> {
    let o = window.index(0).ok_or_else(|| Error::Window("window must contain the origin".into()))?;
    let u = site_uniforms(window, seed);
    let mut eta: Vec<u32> = u.iter().map(|&x| nu.quantile(x)).collect();
    let omega = eta.clone();
    eta[o] = hat.quantile(u[o]);
    let mut plus = eta.clone();
    plus[o] += 1;
    ZrpCoupled::new(g, window, vec![plus, eta, omega], seed)?.with_labels((0, 1), Some(0), None)
}

/// Background for the label tails: `ω ~ ν^ρ ≥ η ~ ν^λ` coupled through one
/// uniform per site, with `ω_0 ≥ η_0 + 1`; `y = z = 0` on the lowest
/// discrepancy at the origin.
pub fn label_setup(g: &RateFn, rho: f64, lambda: f64, window: ZrpWindow, seed: u64) -> Result<ZrpCoupled> {
    if !(lambda < rho) {
        return domain("label setup needs lambda < rho");
    }
    label_setup_with(g, &invariant_measure(g, rho)?, &invariant_measure(g, lambda)?, window, seed)
}

fn label_setup_with(g: &RateFn, hi: &ZrpMeasure, lo: &ZrpMeasure, window: ZrpWindow, seed: u64) -> Result<ZrpCoupled> {
    let o = window.index(0).ok_or_else(|| Error::Window("window must contain the origin".into()))?;
    let u = site_uniforms(window, seed);
    let mut omega: Vec<u32> = u.iter().map(|&x| hi.quantile(x)).collect();
    let eta: Vec<u32> = u.iter().map(|&x| lo.quantile(x)).collect();
    omega[o] = omega[o].max(eta[o] + 1);
    ZrpCoupled::new(g, window, vec![omega, eta], seed)?.with_labels((0, 1), Some(0), Some(0))
}

/// Label tails against `r^k`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelTailPoint {
    pub k: i64,
    /// `P(y(t) ≥ k)`.
    pub y_tail: Measured,
    /// `P(z(t) ≤ −k)`.
    pub z_tail: Measured,
    pub bound: f64,
}

pub fn label_tails(
    g: &RateFn,
    rho: f64,
    lambda: f64,
    t: f64,
    kmax: i64,
    replicas: u64,
    seed: u64,
) -> Result<Vec<LabelTailPoint>> {
    let mut names = Vec::new();
    for k in 1..=kmax {
        names.push(format!("y{k}"));
        names.push(format!("z{k}"));
    }
    if !(lambda < rho) {
        return domain("label tails need lambda < rho");
    }
    let (hi, lo) = (invariant_measure(g, rho)?, invariant_measure(g, lambda)?);
    let window = ZrpWindow::covering(0, 0, t);
    let acc = run_replicas(&Accumulator::new(names), replicas, SeedPolicy::new(seed), |s| {
        let mut c = label_setup_with(g, &hi, &lo, window, s)?;
        c.run_until(t)?;
        let (y, z) = (c.y.unwrap().label, c.z.unwrap().label);
        let mut out = Vec::with_capacity(2 * kmax as usize);
        for k in 1..=kmax {
            out.push((y >= k) as u8 as f64);
            out.push((z <= -k) as u8 as f64);
        }
        Ok(out)
    })?;
    let est = acc.estimate()?;
    Ok((1..=kmax)
        .map(|k| LabelTailPoint {
            k,
            y_tail: est.mean_of(&format!("y{k}")),
            z_tail: est.mean_of(&format!("z{k}")),
            bound: g.r.powi(k as i32),
        })
        .collect())
}

/// Identity-suite request for the zero-range process.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZrpIdentityConfig {
    pub rho: f64,
    pub t: f64,
    pub z: Option<i64>,
    pub sites: Vec<i64>,
    pub replicas: u64,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZrpSiteCov {
    pub j: i64,
    pub cov: Measured,
    /// `Var(η_0) P̂(Q(t) = j)`.
    pub scaled_prob: Measured,
    pub diff: Measured,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZrpIdentityReport {
    pub rho: f64,
    pub t: f64,
    pub z: i64,
    pub replicas: u64,
    pub seed: u64,
    pub occupation_var: f64,
    pub flux: f64,
    pub char_speed: f64,
    pub mean_current: Measured,
    pub expected_current: f64,
    pub var_current: Measured,
    /// `Var(η_0) Ê|Q − z|`.
    pub scaled_abs_q: Measured,
    /// Mean of `(J − EJ)² − Var(η_0)|Q − z|`.
    pub var_minus_q: Measured,
    pub speed: Measured,
    /// Mean of `J_0(t) − ∫ g(ω_0) ds`.
    pub martingale: Measured,
    pub sites: Vec<ZrpSiteCov>,
}

pub fn zrp_identity_suite(g: &RateFn, cfg: &ZrpIdentityConfig) -> Result<ZrpIdentityReport> {
    if !(cfg.t > 0.0) || cfg.replicas < 2 {
        return domain("identity suite needs t > 0 and at least two replicas");
    }
    let nu = invariant_measure(g, cfg.rho)?;
    let hat = HatMeasure::from_measure(&nu)?;
    let var = nu.variance();
    let v = nu.char_speed();
    let t = cfg.t;
    let z = cfg.z.unwrap_or_else(|| floor_robust(v * t));
    let ej = t * nu.flux() - z as f64 * cfg.rho;
    let lo = cfg.sites.iter().copied().chain([z, 0]).min().unwrap();
    let hi = cfg.sites.iter().copied().chain([z, 0]).max().unwrap();
    let window = ZrpWindow::covering(lo, hi, t);
    let mut names: Vec<String> = ["J", "absQ", "d", "Q", "M"].iter().map(|s| s.to_string()).collect();
    for s in &cfg.sites {
        names.extend([format!("cov{s}"), format!("pq{s}"), format!("dc{s}")]);
    }
    let template = Accumulator::new(names).centered("J", ej);
    let acc = run_replicas(&template, cfg.replicas, SeedPolicy::new(cfg.seed), |s| {
        let mut c = zrp_couple_with(g, &nu, &hat, window, s)?;
        let w0 = c.occupation(2, 0).unwrap() as f64;
        let mj = c.add_meter(ZrpMeterSpec { member: 2, x: z, t })?;
        let mm = c.add_meter(ZrpMeterSpec { member: 2, x: 0, t })?;
        c.protect(lo, hi, t)?;
        c.run_until(t)?;
        let j = c.reading(mj).unwrap().current as f64;
        let r0 = c.reading(mm).unwrap();
        let q = c.y_site().unwrap();
        let mut out = vec![
            j,
            (q - z).abs() as f64,
            (j - ej).powi(2) - var * (q - z).abs() as f64,
            q as f64,
            r0.flux as f64 - r0.compensator,
        ];
        for &x in &cfg.sites {
            let cv = (c.occupation(2, x).unwrap() as f64 - cfg.rho) * (w0 - cfg.rho);
            let ind = (q == x) as u8 as f64;
            out.extend([cv, ind, cv - var * ind]);
        }
        Ok(out)
    })?;
    let est = acc.estimate()?;
    let scale = |m: Measured, c: f64| Measured { value: m.value * c, se: m.se * c.abs() };
    Ok(ZrpIdentityReport {
        rho: cfg.rho,
        t,
        z,
        replicas: cfg.replicas,
        seed: cfg.seed,
        occupation_var: var,
        flux: nu.flux(),
        char_speed: v,
        mean_current: est.mean_of("J"),
        expected_current: ej,
        var_current: est.var_of("J"),
        scaled_abs_q: scale(est.mean_of("absQ"), var),
        var_minus_q: est.mean_of("d"),
        speed: scale(est.mean_of("Q"), 1.0 / t),
        martingale: est.mean_of("M"),
        sites: cfg
            .sites
            .iter()
            .map(|s| ZrpSiteCov {
                j: *s,
                cov: est.mean_of(&format!("cov{s}")),
                scaled_prob: scale(est.mean_of(&format!("pq{s}")), var),
                diff: est.mean_of(&format!("dc{s}")),
            })
            .collect(),
    })
}

/// One point of a zero-range variance series.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZrpSeriesPoint {
    pub t: f64,
    pub x: i64,
    pub mean: Measured,
    pub var: Measured,
    pub replicas: u64,
    pub seconds: f64,
}

/// `Var J_{⌊V^ρ t⌋}(t)` under `ν^ρ` at each time.
pub fn zrp_variance_series(g: &RateFn, rho: f64, times: &[f64], replicas: u64, seed: u64) -> Result<Vec<ZrpSeriesPoint>> {
    let nu = invariant_measure(g, rho)?;
    let v = nu.char_speed();
    let mut out = Vec::new();
    for (k, &t) in times.iter().enumerate() {
        let start = std::time::Instant::now();
        let x = floor_robust(v * t);
        let ej = t * nu.flux() - x as f64 * rho;
        let window = ZrpWindow::covering(0, x, t);
        let policy = SeedPolicy::new(rng::key(seed, &[k as u64]));
        let acc = run_replicas(&Accumulator::new(["J"]).centered("J", ej), replicas, policy, |s| {
            let init = sample_stationary(&nu, window, s);
            let mut c = ZrpCoupled::new(g, window, vec![init], s)?;
            let m = c.add_meter(ZrpMeterSpec { member: 0, x, t })?;
            c.run_until(t)?;
            Ok(vec![c.reading(m).unwrap().current as f64])
        })?;
        let est = acc.estimate()?;
        out.push(ZrpSeriesPoint {
            t,
            x,
            mean: est.mean_of("J"),
            var: est.var_of("J"),
            replicas,
            seconds: start.elapsed().as_secs_f64(),
        });
    }
    Ok(out)
}

pub fn zrp_variance_slope(series: &[ZrpSeriesPoint], seed: u64) -> Result<SlopeFit> {
    let pts: Vec<(f64, f64, f64)> = series.iter().map(|p| (p.t, p.var.value, p.var.se)).collect();
    fit_slope(&pts, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn geometric_case() {
        let g = RateFn::new(RateFamily::Constant, None).unwrap();
        let nu = invariant_measure(&g, 1.0).unwrap();
        assert!((nu.phi - 0.5).abs() < 1e-10);
        for k in 0..20 {
            assert!((nu.pmf[k] - 0.5f64.powi(k as i32 + 1)).abs() < 1e-12);
        }
        assert!((nu.char_speed() - 0.25).abs() < 1e-9);
    }

    #[test]
    fn exp_rate_ratio() {
        let g = RateFn::exp_saturating(1.0, 1.0).unwrap();
        assert!((g.r - (-1.0f64).exp()).abs() < 1e-12);
        assert!(RateFn::new(RateFamily::ExpSaturating { a: 1.0, b: 1.0 }, Some(0.3)).is_err());
        let convex = RateFn::new(RateFamily::Table { values: vec![0.5, 0.6, 0.9] }, None).unwrap();
        assert!((convex.r - 3.0).abs() < 1e-9);
        assert!(RateFn::new(RateFamily::Table { values: vec![0.5, 0.6, 0.9] }, Some(1.0)).is_err());
        assert!(RateFn::new(RateFamily::Table { values: vec![0.5, 0.4] }, None).is_err());
    }

    #[test]
    fn refresh_probabilities() {
        let g = RateFn::exp_saturating(1.0, 1.0).unwrap();
        for (w, e) in [(3u32, 0u32), (5, 2), (2, 1), (7, 0)] {
            let s = SiteRates::at(&g, w, e);
            let j = joint_refresh(&s, 0, (w - e) as i64 - 1).unwrap();
            let tot: f64 = j.iter().map(|o| o.0).sum();
            assert!((tot - 1.0).abs() < 1e-12);
            assert!(j.iter().all(|o| o.0 == 0.0 || (o.0 > 0.0 && o.1 .0 <= o.1 .1)));
        }
        // No second-class rate: y falls to the bottom label.
        let flat = SiteRates { g_eta: 1.0, g_eta1: 1.0, g_omega1: 1.0, g_omega: 1.0 };
        assert_eq!(y_refresh(&flat, 2, 5)[0], (1.0, 2));
    }

    #[test]
    fn empty_system_is_still() {
        let g = RateFn::exp_saturating(1.0, 1.0).unwrap();
        let w = ZrpWindow { lo: -20, hi: 20 };
        let c = zrp_run(&g, vec![0; w.len()], w, 10.0, 1).unwrap();
        assert!(c.member(0).iter().all(|&v| v == 0));
    }
}

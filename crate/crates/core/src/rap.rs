//! Random average process: height dynamics, the dual backward walk in a
//! space-time environment, and the constants `σ_D²`, `β`, `κ`.

use crate::error::{domain, Error, Result};
use crate::gauss::SpaceTimePoint;
use crate::iid::floor_robust;
use crate::rng::{self, tag, CounterRng};
use rand_distr::{Beta, Distribution, Gamma};
use serde::{Deserialize, Serialize};

/// Law of the random weight vector `(ω(j))_{j ∈ [lo, lo+len)}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum WeightKind {
    /// `ω(−1) ~ Beta(α, θ−α)`, `ω(0) = 1 − ω(−1)`.
    Beta { alpha: f64, theta: f64 },
    Dirichlet { lo: i64, alphas: Vec<f64> },
    /// The same weights at every space-time point.
    Fixed { lo: i64, weights: Vec<f64> },
    /// `ω(j) ∝ base_j U_j` with i.i.d. uniforms. No closed-form moments.
    UniformScaled { lo: i64, base: Vec<f64> },
}

impl WeightKind {
    fn support(&self) -> (i64, usize) {
        match self {
            WeightKind::Beta { .. } => (-1, 2),
            WeightKind::Dirichlet { lo, alphas } => (*lo, alphas.len()),
            WeightKind::Fixed { lo, weights } => (*lo, weights.len()),
            WeightKind::UniformScaled { lo, base } => (*lo, base.len()),
        }
    }

    fn closed_form(&self) -> Option<(Vec<f64>, Vec<Vec<f64>>)> {
        let dirichlet = |a: &[f64]| {
            let s: f64 = a.iter().sum();
            let p: Vec<f64> = a.iter().map(|x| x / s).collect();
            let m = a
                .iter()
                .enumerate()
                .map(|(i, ai)| {
                    a.iter()
                        .enumerate()
                        .map(|(j, aj)| (ai * aj + if i == j { *ai } else { 0.0 }) / (s * (s + 1.0)))
                        .collect()
                })
                .collect();
            (p, m)
        };
        match self {
            WeightKind::Beta { alpha, theta } => Some(dirichlet(&[*alpha, theta - alpha])),
            WeightKind::Dirichlet { alphas, .. } => Some(dirichlet(alphas)),
            WeightKind::Fixed { weights, .. } => {
                let m = weights.iter().map(|a| weights.iter().map(|b| a * b).collect()).collect();
                Some((weights.clone(), m))
            }
            WeightKind::UniformScaled { .. } => None,
        }
    }

    fn validate(&self) -> Result<()> {
        let positive = |xs: &[f64], what: &str| {
            if xs.is_empty() || xs.iter().any(|x| !(*x > 0.0 && x.is_finite())) {
                domain(format!("{what} must be nonempty and positive"))
            } else {
                Ok(())
            }
        };
        match self {
            WeightKind::Beta { alpha, theta } => {
                if !(*alpha > 0.0 && theta > alpha && theta.is_finite()) {
                    return domain(format!("Beta weights need theta > alpha > 0, got alpha={alpha}, theta={theta}"));
                }
            }
            WeightKind::Dirichlet { alphas, .. } => positive(alphas, "Dirichlet parameters")?,
            WeightKind::UniformScaled { base, .. } => positive(base, "scale factors")?,
            WeightKind::Fixed { weights, .. } => {
                if weights.iter().any(|w| !(*w >= 0.0)) || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
                    return domain("fixed weights must form a probability vector");
                }
                if weights.iter().any(|w| *w >= 1.0) {
                    return domain("fixed weights with a unit entry violate ellipticity");
                }
            }
        }
        Ok(())
    }

    /// Fill `out` with one draw from the weight law.
    fn draw(&self, r: &mut CounterRng, out: &mut [f64]) {
        match self {
            WeightKind::Beta { alpha, theta } => {
                let b = theta - alpha;
                let u = r.next_unit();
                let x = if *alpha == 1.0 && b == 1.0 {
                    u
                } else if *alpha == 1.0 {
                    1.0 - (1.0 - u).powf(1.0 / b)
                } else if b == 1.0 {
                    u.powf(1.0 / alpha)
                } else {
                    Beta::new(*alpha, b).expect("validated").sample(r)
                };
                out[0] = x;
                out[1] = 1.0 - x;
            }
            WeightKind::Dirichlet { alphas, .. } => {
                let mut s = 0.0;
                for (o, a) in out.iter_mut().zip(alphas) {
                    *o = Gamma::new(*a, 1.0).expect("validated").sample(r);
                    s += *o;
                }
                out.iter_mut().for_each(|o| *o /= s);
            }
            WeightKind::Fixed { weights, .. } => out.copy_from_slice(weights),
            WeightKind::UniformScaled { base, .. } => {
                let mut s = 0.0;
                for (o, b) in out.iter_mut().zip(base) {
                    *o = b * r.next_unit();
                    s += *o;
                }
                if s == 0.0 {
                    out.copy_from_slice(base);
                    s = base.iter().sum();
                }
                out.iter_mut().for_each(|o| *o /= s);
            }
        }
    }
}

/// Weight law with its first and second moments.
#[derive(Clone, Debug, Serialize)]
pub struct WeightLaw {
    pub kind: WeightKind,
    /// Support `[lo, lo + p.len())`.
    pub lo: i64,
    /// Averaged weights `p(0, j) = E ω(j)`.
    pub p: Vec<f64>,
    /// `E[ω(i) ω(j)]`.
    pub second: Vec<Vec<f64>>,
    pub v: f64,
    pub sigma1_sq: f64,
    /// Variance of the quenched drift `E^ω X₁`.
    pub sigma_d_sq: f64,
    /// Monte Carlo sample count behind the moments, zero for closed forms.
    pub moment_samples: u64,
    pub moment_seed: u64,
}

const MOMENT_SAMPLES: u64 = 1_000_000;

impl WeightLaw {
    /// Closed-form moments where available, otherwise a `10⁶`-sample estimate.
    pub fn new(kind: WeightKind) -> Result<Self> {
        kind.validate()?;
        match kind.closed_form() {
            Some((p, second)) => Self::from_moments(kind, p, second, 0, 0),
            None => Self::monte_carlo(kind, MOMENT_SAMPLES, 0x5eed),
        }
    }

    /// Beta(α, θ−α) weights on `{−1, 0}`.
    pub fn beta(alpha: f64, theta: f64) -> Result<Self> {
        Self::new(WeightKind::Beta { alpha, theta })
    }

    /// Moments estimated from `samples` draws regardless of closed forms.
    pub fn monte_carlo(kind: WeightKind, samples: u64, seed: u64) -> Result<Self> {
        let (p, second) = sample_moments(&kind, 0, samples, seed);
        Self::from_moments(kind, p, second, samples, seed)
    }

    fn from_moments(kind: WeightKind, p: Vec<f64>, second: Vec<Vec<f64>>, samples: u64, seed: u64) -> Result<Self> {
        let (lo, len) = kind.support();
        let v: f64 = p.iter().enumerate().map(|(i, w)| (lo + i as i64) as f64 * w).sum();
        let sigma1_sq: f64 = p.iter().enumerate().map(|(i, w)| ((lo + i as i64) as f64 - v).powi(2) * w).sum();
        let mut sigma_d_sq = 0.0;
        for i in 0..len {
            for j in 0..len {
                let (a, b) = ((lo + i as i64) as f64, (lo + j as i64) as f64);
                sigma_d_sq += a * b * (second[i][j] - p[i] * p[j]);
            }
        }
        let law = WeightLaw { kind, lo, p, second, v, sigma1_sq, sigma_d_sq: sigma_d_sq.max(0.0), moment_samples: samples, moment_seed: seed };
        law.check_span()?;
        Ok(law)
    }

    fn check_span(&self) -> Result<()> {
        let pts: Vec<i64> =
            self.p.iter().enumerate().filter(|(_, w)| **w > 0.0).map(|(i, _)| self.lo + i as i64).collect();
        let g = pts.windows(2).fold(0i64, |g, w| gcd(g, w[1] - w[0]));
        if g != 1 {
            return domain(format!("averaged weights have span {g}, need span 1"));
        }
        Ok(())
    }

    pub fn range(&self) -> (i64, i64) {
        (self.lo, self.lo + self.p.len() as i64 - 1)
    }

    /// `b = −V`.
    pub fn b(&self) -> f64 {
        -self.v
    }

    /// Weights `ω_{k,s}`, drawn from the stream keyed by `(seed, s)` then `k`.
    pub fn sample_weights(&self, seed: u64, k: i64, s: u64, out: &mut [f64]) {
        self.sample_row_site(weight_row_key(seed, s), k, out)
    }

    #[inline]
    fn sample_row_site(&self, row: u64, k: i64, out: &mut [f64]) {
        let mut r = CounterRng::new(rng::word(row, rng::site_tag(k)));
        self.kind.draw(&mut r, out);
    }
}

fn weight_row_key(seed: u64, s: u64) -> u64 {
    rng::key(seed, &[tag::WEIGHT, s])
}

fn gcd(a: i64, b: i64) -> i64 {
    if b == 0 {
        a.abs()
    } else {
        gcd(b, a % b)
    }
}

fn sample_moments(kind: &WeightKind, from: u64, to: u64, seed: u64) -> (Vec<f64>, Vec<Vec<f64>>) {
    let (_, len) = kind.support();
    let mut p = vec![0.0; len];
    let mut m = vec![vec![0.0; len]; len];
    let mut w = vec![0.0; len];
    for i in from..to {
        let mut r = CounterRng::keyed(seed, &[tag::WEIGHT, i]);
        kind.draw(&mut r, &mut w);
        for a in 0..len {
            p[a] += w[a];
            for b in 0..len {
                m[a][b] += w[a] * w[b];
            }
        }
    }
    let c = (to - from) as f64;
    p.iter_mut().for_each(|x| *x /= c);
    m.iter_mut().flatten().for_each(|x| *x /= c);
    (p, m)
}

/// A realized space-time field of weight vectors.
pub trait WeightField {
    /// Support `[lo, hi]` of every vector.
    fn range(&self) -> (i64, i64);
    /// Weights `ω_{k,s}` into `out` (length `hi − lo + 1`).
    fn fill(&self, k: i64, s: u64, out: &mut [f64]);
    /// Weights for the sites `lo, lo+1, …` at time `s`, packed row by row.
    fn fill_row(&self, s: u64, lo: i64, out: &mut [f64]) {
        let (a, b) = self.range();
        let w = (b - a + 1) as usize;
        for (i, chunk) in out.chunks_mut(w).enumerate() {
            self.fill(lo + i as i64, s, chunk);
        }
    }
}

/// Weights regenerated on demand from the counter-based stream.
#[derive(Clone, Debug)]
pub struct SampledWeights<'a> {
    pub law: &'a WeightLaw,
    pub seed: u64,
}

impl WeightField for SampledWeights<'_> {
    fn range(&self) -> (i64, i64) {
        self.law.range()
    }
    fn fill(&self, k: i64, s: u64, out: &mut [f64]) {
        self.law.sample_weights(self.seed, k, s, out)
    }
    fn fill_row(&self, s: u64, lo: i64, out: &mut [f64]) {
        let row = weight_row_key(self.seed, s);
        let w = self.law.p.len();
        for (i, chunk) in out.chunks_mut(w).enumerate() {
            self.law.sample_row_site(row, lo + i as i64, chunk);
        }
    }
}

/// Heights `σ(i)` on a window `[lo, lo + len)` at a given time.
#[derive(Clone, Debug, PartialEq)]
pub struct HeightField {
    pub lo: i64,
    pub heights: Vec<f64>,
    pub time: u64,
}

impl HeightField {
    pub fn hi(&self) -> i64 {
        self.lo + self.heights.len() as i64 - 1
    }

    pub fn get(&self, i: i64) -> Option<f64> {
        let j = i - self.lo;
        (j >= 0 && j < self.heights.len() as i64).then(|| self.heights[j as usize])
    }

    /// Increments `η_i = σ(i) − σ(i−1)` for `i ∈ (lo, hi]`.
    pub fn increments(&self) -> Vec<f64> {
        self.heights.windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// Initial heights with `σ(0) = 0` built from i.i.d. increments.
    pub fn from_increments(lo: i64, hi: i64, law: &IncrementLaw, seed: u64) -> Result<Self> {
        if !(lo <= 0 && 0 <= hi) {
            return Err(Error::Contract("height window must contain the origin".into()));
        }
        let mut h = vec![0.0; (hi - lo + 1) as usize];
        let z = (-lo) as usize;
        for i in 1..=hi {
            h[z + i as usize] = h[z + i as usize - 1] + law.sample(seed, i);
        }
        for i in (lo + 1..=0).rev() {
            h[(i - 1 - lo) as usize] = h[(i - lo) as usize] - law.sample(seed, i);
        }
        Ok(HeightField { lo, heights: h, time: 0 })
    }
}

/// One update `σ_s(k) = Σ_j ω_{k,s}(j) σ_{s−1}(k+j)` with `s = time + 1`.
/// The window loses the weight support at each end.
pub fn rap_step(h: &HeightField, field: &dyn WeightField) -> Result<HeightField> {
    let (a, b) = field.range();
    let lo = h.lo - a;
    let hi = h.hi() - b;
    if hi < lo {
        return Err(Error::Window(format!("height window exhausted at time {}", h.time)));
    }
    let s = h.time + 1;
    let width = (b - a + 1) as usize;
    let mut w = vec![0.0; (hi - lo + 1) as usize * width];
    field.fill_row(s, lo, &mut w);
    let mut out = Vec::with_capacity((hi - lo + 1) as usize);
    for k in lo..=hi {
        let i = (k - lo) as usize;
        let base = (k + a - h.lo) as usize;
        out.push(w[i * width..(i + 1) * width].iter().zip(&h.heights[base..]).map(|(x, y)| x * y).sum());
    }
    Ok(HeightField { lo, heights: out, time: s })
}

/// Quenched law of the backward walk after some steps.
#[derive(Clone, Debug)]
pub struct DualLaw {
    pub lo: i64,
    pub probs: Vec<f64>,
    /// Probability mass dropped by trimming.
    pub trimmed: f64,
}

impl DualLaw {
    pub fn mean(&self) -> f64 {
        let mut s = crate::harness::ExactSum::new();
        for (i, p) in self.probs.iter().enumerate() {
            s.add((self.lo + i as i64) as f64 * p);
        }
        s.value()
    }

    pub fn hi(&self) -> i64 {
        self.lo + self.probs.len() as i64 - 1
    }

    /// `E f(X)`.
    pub fn expect(&self, f: impl Fn(i64) -> f64) -> f64 {
        self.probs.iter().enumerate().map(|(i, p)| p * f(self.lo + i as i64)).sum()
    }
}

/// Law of `X^{i,τ}_steps`, the walk started at `(i, τ)` that uses
/// `ω_{x, τ−s}` at its `s`-th step. Sites with mass below `trim` are dropped
/// at the band edges.
pub fn dual_law(field: &dyn WeightField, start: i64, tau: u64, steps: u64, trim: f64) -> Result<DualLaw> {
    if steps > tau {
        return Err(Error::Contract(format!("{steps} backward steps from time {tau} leave the weight field")));
    }
    let (a, b) = field.range();
    let width = (b - a + 1) as usize;
    let mut w = Vec::new();
    let mut lo = start;
    let mut probs = vec![1.0];
    let mut trimmed = 0.0;
    for s in 0..steps {
        let mut next = vec![0.0; probs.len() + width - 1];
        w.resize(probs.len() * width, 0.0);
        field.fill_row(tau - s, lo, &mut w);
        for (i, &p) in probs.iter().enumerate() {
            for (j, wj) in w[i * width..(i + 1) * width].iter().enumerate() {
                next[i + j] += p * wj;
            }
        }
        lo += a;
        let first = next.iter().position(|&p| p >= trim).unwrap_or(0);
        let last = next.iter().rposition(|&p| p >= trim).unwrap_or(next.len() - 1);
        trimmed += next[..first].iter().sum::<f64>() + next[last + 1..].iter().sum::<f64>();
        lo += first as i64;
        probs = next[first..=last].to_vec();
    }
    Ok(DualLaw { lo, probs, trimmed })
}

/// `E^ω X^{i,τ}_steps` without trimming.
pub fn dual_quenched_mean(field: &dyn WeightField, start: i64, tau: u64, steps: u64) -> Result<f64> {
    Ok(dual_law(field, start, tau, steps, 0.0)?.mean())
}

/// Increment law for the initial heights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum IncrementLaw {
    Constant { slope: f64 },
    Gamma { shape: f64, rate: f64 },
}

impl IncrementLaw {
    pub fn validate(&self) -> Result<()> {
        match *self {
            IncrementLaw::Constant { slope } if slope.is_finite() => Ok(()),
            IncrementLaw::Gamma { shape, rate } if shape > 0.0 && rate > 0.0 => Ok(()),
            _ => domain(format!("invalid increment law {self:?}")),
        }
    }

    /// `(μ̄, σ₀²)`.
    pub fn moments(&self) -> (f64, f64) {
        match *self {
            IncrementLaw::Constant { slope } => (slope, 0.0),
            IncrementLaw::Gamma { shape, rate } => (shape / rate, shape / (rate * rate)),
        }
    }

    pub fn sample(&self, seed: u64, i: i64) -> f64 {
        match *self {
            IncrementLaw::Constant { slope } => slope,
            IncrementLaw::Gamma { shape, rate } => {
                let mut r = CounterRng::keyed(seed, &[tag::INIT, rng::site_tag(i)]);
                Gamma::new(shape, 1.0 / rate).expect("validated").sample(&mut r)
            }
        }
    }
}

/// Symmetric kernel on `[−d, d]` stored as a vector of length `2d+1`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Kernel {
    pub d: i64,
    pub w: Vec<f64>,
}

impl Kernel {
    pub fn at(&self, y: i64) -> f64 {
        if y.abs() > self.d {
            0.0
        } else {
            self.w[(y + self.d) as usize]
        }
    }
}

/// The two-walk difference chain: `q(0,·)` at the origin and `q̄` elsewhere,
/// with the potential kernel `ā` of `q̄` and the derived constants.
#[derive(Clone, Debug, Serialize)]
pub struct PerturbedKernel {
    pub q0: Kernel,
    pub qbar: Kernel,
    /// `ā(x)` for `0 ≤ x ≤ radius`; `ā` is even.
    pub abar: Vec<f64>,
    pub sigma1_sq: f64,
    pub sigma_d_sq: f64,
    pub beta: f64,
    pub kappa: f64,
}

/// `q(0,y) = Σ_z E[ω(z)ω(z+y)]` and `q̄(0,y) = Σ_z p(z)p(z+y)`.
pub fn q_kernels(law: &WeightLaw) -> (Kernel, Kernel) {
    let len = law.p.len() as i64;
    let d = len - 1;
    let mut q0 = vec![0.0; (2 * d + 1) as usize];
    let mut qb = vec![0.0; (2 * d + 1) as usize];
    for z in 0..len {
        for y in -d..=d {
            let u = z + y;
            if (0..len).contains(&u) {
                q0[(y + d) as usize] += law.second[z as usize][u as usize];
                qb[(y + d) as usize] += law.p[z as usize] * law.p[u as usize];
            }
        }
    }
    (Kernel { d, w: q0 }, Kernel { d, w: qb })
}

/// Potential kernel of a symmetric span-1 kernel on `[0, radius]`.
///
/// Solves `ā(x) = Σ_y q̄(y) ā(x+y)` for `1 ≤ x ≤ radius` with `ā(0) = 0`,
/// evenness, and the asymptotic slope `ā(x+1) − ā(x) = 1/σ²` past the table
/// edge (`σ²` the kernel variance). The normalization `Σ_y q̄(y)ā(y) = 1` is
/// not imposed and serves as a certificate.
pub fn potential_kernel(qbar: &Kernel, radius: usize) -> Result<Vec<f64>> {
    let d = qbar.d;
    for y in 1..=d {
        if (qbar.at(y) - qbar.at(-y)).abs() > 1e-12 {
            return Err(Error::Contract("potential kernel needs a symmetric kernel".into()));
        }
    }
    let var: f64 = (-d..=d).map(|y| (y * y) as f64 * qbar.at(y)).sum();
    if !(var > 0.0) {
        return domain("degenerate kernel has no potential kernel");
    }
    let m = radius;
    if (m as i64) < 2 * d {
        return Err(Error::Contract("table radius too small for the kernel range".into()));
    }
    // Unknowns ā(1..=m) at indices 0..m.
    let mut a = vec![vec![0.0; m]; m];
    let mut rhs = vec![0.0; m];
    for x in 1..=m as i64 {
        let row = (x - 1) as usize;
        a[row][row] += 1.0;
        for y in -d..=d {
            let c = qbar.at(y);
            if c == 0.0 {
                continue;
            }
            let z = (x + y).abs();
            if z == 0 {
                continue;
            }
            if z as usize <= m {
                a[row][z as usize - 1] -= c;
            } else {
                a[row][m - 1] -= c;
                rhs[row] += c * (z - m as i64) as f64 / var;
            }
        }
    }
    let sol = solve_dense(a, rhs)?;
    let mut out = Vec::with_capacity(m + 1);
    out.push(0.0);
    out.extend(sol);
    Ok(out)
}

fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Result<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        if a[piv][col].abs() < 1e-300 {
            return Err(Error::Numeric("singular potential-kernel system".into()));
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            if f != 0.0 {
                for c in col..n {
                    a[r][c] -= f * a[col][c];
                }
                b[r] -= f * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    Ok(x)
}

impl PerturbedKernel {
    pub fn new(law: &WeightLaw, radius: usize) -> Result<Self> {
        let (q0, qbar) = q_kernels(law);
        let abar = potential_kernel(&qbar, radius.max(2 * qbar.d as usize))?;
        let mut beta = 0.0;
        for y in -q0.d..=q0.d {
            beta += q0.at(y) * abar[y.unsigned_abs() as usize];
        }
        if !(beta > 0.0) {
            return domain(format!("beta = {beta} must be positive"));
        }
        let kappa = law.sigma_d_sq / (beta * law.sigma1_sq);
        Ok(PerturbedKernel { q0, qbar, abar, sigma1_sq: law.sigma1_sq, sigma_d_sq: law.sigma_d_sq, beta, kappa })
    }

    /// `ā(x)` for any `x`, extended linearly past the table.
    pub fn abar_at(&self, x: i64) -> f64 {
        let m = self.abar.len() - 1;
        let ax = x.unsigned_abs() as usize;
        if ax <= m {
            self.abar[ax]
        } else {
            self.abar[m] + (ax - m) as f64 / (2.0 * self.sigma1_sq)
        }
    }

    /// Largest harmonicity residual `|Σ_y q̄(x,y)ā(y) − ā(x)|` over
    /// `1 ≤ |x| ≤ radius − 2d`, and the normalization `Σ_y q̄(0,y)ā(y)`.
    pub fn certificate(&self) -> (f64, f64) {
        let d = self.qbar.d;
        let m = (self.abar.len() - 1) as i64;
        let mut worst: f64 = 0.0;
        for x in 1..=(m - d) {
            let s: f64 = (-d..=d).map(|y| self.qbar.at(y) * self.abar_at(x + y)).sum();
            worst = worst.max((s - self.abar_at(x)).abs());
        }
        let norm = (-d..=d).map(|y| self.qbar.at(y) * self.abar_at(y)).sum();
        (worst, norm)
    }

    /// Green function `Σ_{k=0}^{n−1} q^k(x, 0)` of the perturbed chain.
    pub fn green(&self, x: i64, n: u64) -> f64 {
        let d = self.q0.d;
        let span = x.abs() + d * n as i64 + 1;
        let off = span;
        let mut cur = vec![0.0; (2 * span + 1) as usize];
        cur[(x + off) as usize] = 1.0;
        let mut next = cur.clone();
        let mut total = 0.0;
        let (mut lo, mut hi) = (x + off, x + off);
        for _ in 0..n {
            total += cur[off as usize];
            let (nlo, nhi) = (lo - d, hi + d);
            next[nlo as usize..=nhi as usize].iter_mut().for_each(|v| *v = 0.0);
            for z in lo..=hi {
                let p = cur[z as usize];
                if p == 0.0 {
                    continue;
                }
                let k = if z == off { &self.q0 } else { &self.qbar };
                for y in -d..=d {
                    next[(z + y) as usize] += p * k.at(y);
                }
            }
            std::mem::swap(&mut cur, &mut next);
            lo = nlo;
            hi = nhi;
            // Mass below 1e-24 at the edges cannot move the sum.
            while hi > lo && hi > off && cur[hi as usize] < 1e-24 {
                cur[hi as usize] = 0.0;
                hi -= 1;
            }
            while lo < hi && lo < off && cur[lo as usize] < 1e-24 {
                cur[lo as usize] = 0.0;
                lo += 1;
            }
        }
        total
    }
}

/// `κ` with a batch-means standard error when the moments come from sampling.
#[derive(Clone, Debug, Serialize)]
pub struct KappaEstimate {
    pub sigma_d_sq: f64,
    pub beta: f64,
    pub kappa: f64,
    pub kappa_se: f64,
}

/// `(σ_D², β, κ)`. Closed-form laws report a zero standard error.
pub fn kappa_const(law: &WeightLaw, radius: usize) -> Result<KappaEstimate> {
    let k = PerturbedKernel::new(law, radius)?;
    let mut est = KappaEstimate { sigma_d_sq: k.sigma_d_sq, beta: k.beta, kappa: k.kappa, kappa_se: 0.0 };
    if law.moment_samples > 0 {
        let batches = 20u64;
        let per = law.moment_samples / batches;
        let mut ks = Vec::new();
        for b in 0..batches {
            let (p, second) = sample_moments(&law.kind, b * per, (b + 1) * per, law.moment_seed);
            let sub = WeightLaw::from_moments(law.kind.clone(), p, second, per, law.moment_seed)?;
            ks.push(PerturbedKernel::new(&sub, radius)?.kappa);
        }
        let m = ks.iter().sum::<f64>() / batches as f64;
        let var = ks.iter().map(|k| (k - m).powi(2)).sum::<f64>() / (batches - 1) as f64;
        est.kappa_se = (var / batches as f64).sqrt();
    }
    Ok(est)
}

/// Observer site `y(n) = ⌊ntb⌋ + ⌊r√n⌋` and time `⌊nt⌋`.
pub fn observer(law: &WeightLaw, n: u64, p: &SpaceTimePoint) -> (i64, u64) {
    let nt = n as f64 * p.t;
    let y = floor_robust(nt * law.b()) + floor_robust(p.r * (n as f64).sqrt());
    (y, floor_robust(nt) as u64)
}

/// Exact `E[H̄_n(t,r)²] = n^{−1/2}[σ_D² Σ_{k<⌊nt⌋} q^k(0,0) + c²]`, where
/// `c = ⌊ntb⌋ + ⌊nt⌋V` is the deterministic part of the centering.
pub fn hbar_second_moment(law: &WeightLaw, kernel: &PerturbedKernel, n: u64, t: f64) -> f64 {
    let nt = n as f64 * t;
    let steps = floor_robust(nt) as u64;
    let c = floor_robust(nt * law.b()) as f64 + steps as f64 * law.v;
    (kernel.sigma_d_sq * kernel.green(0, steps) + c * c) / (n as f64).sqrt()
}

/// Coefficients `c_i = 1{i>0} P(X ≥ i) − 1{i≤0} P(X < i)` of the initial
/// increments, on the sites where they can be nonzero.
fn coefficients(dl: &DualLaw) -> (i64, Vec<f64>) {
    let (xlo, xhi) = (dl.lo, dl.hi());
    let mut below = Vec::with_capacity(dl.probs.len());
    let mut cdf = 0.0;
    for q in &dl.probs {
        below.push(cdf);
        cdf += q;
    }
    let p_lt = |i: i64| {
        if i <= xlo {
            0.0
        } else if i > xhi {
            cdf
        } else {
            below[(i - xlo) as usize]
        }
    };
    let lo = xlo.min(0) + 1;
    let c = (lo..=xhi.max(0)).map(|i| if i > 0 { cdf - p_lt(i) } else { -p_lt(i) }).collect();
    (lo, c)
}

/// Moments of `Ȳ_n` given the weights: `E[Ȳ|ω] = n^{−1/4} μ̄(H − r√n)` and
/// `Cov(Ȳ_a, Ȳ_b | ω) = n^{−1/2} σ₀² Σ_i c^a_i c^b_i`.
#[derive(Clone, Debug)]
pub struct RapConditional {
    pub mean: Vec<f64>,
    pub cov: Vec<Vec<f64>>,
}

pub fn rap_conditional_moments(
    law: &WeightLaw,
    inc: &IncrementLaw,
    n: u64,
    points: &[SpaceTimePoint],
    seed: u64,
) -> Result<RapConditional> {
    inc.validate()?;
    let (mu, var) = inc.moments();
    let field = SampledWeights { law, seed };
    let rn = (n as f64).sqrt();
    let mut mean = Vec::new();
    let mut coef = Vec::new();
    for p in points {
        let (y, steps) = observer(law, n, p);
        let dl = dual_law(&field, y, steps, steps, 1e-18)?;
        mean.push(rn.powf(-0.5) * mu * (dl.mean() - p.r * rn));
        coef.push(coefficients(&dl));
    }
    let m = points.len();
    let mut cov = vec![vec![0.0; m]; m];
    for a in 0..m {
        for b in 0..=a {
            let ((la, ca), (lb, cb)) = (&coef[a], &coef[b]);
            let lo = (*la).max(*lb);
            let hi = (la + ca.len() as i64).min(lb + cb.len() as i64);
            let mut s = 0.0;
            for i in lo..hi {
                s += ca[(i - la) as usize] * cb[(i - lb) as usize];
            }
            cov[a][b] = var * s / rn;
            cov[b][a] = cov[a][b];
        }
    }
    Ok(RapConditional { mean, cov })
}

/// One realization of the current decomposition at a point.
#[derive(Clone, Debug, Serialize)]
pub struct RapSample {
    pub t: f64,
    pub r: f64,
    /// `n^{−1/4}(σ_{⌊nt⌋}(y(n)) − μ̄ r√n)`.
    pub ybar: f64,
    /// `E^ω X`, the quenched mean of the backward walk.
    pub h: f64,
    /// Initial-fluctuation part.
    pub s: f64,
    /// `n^{−1/4}(H − ⌊r√n⌋)`.
    pub hbar: f64,
    /// Height from forward simulation, when requested.
    pub height: Option<f64>,
}

/// Simulate the current at several points through the dual walk, and
/// optionally the forward height dynamics on the light cone.
///
/// Per realization `σ = μ̄H + S` holds exactly, so
/// `Ȳ_n = n^{−1/4}(μ̄(H − r√n) + S)`.
pub fn simulate_rap_current(
    law: &WeightLaw,
    inc: &IncrementLaw,
    n: u64,
    points: &[SpaceTimePoint],
    seed: u64,
    forward: bool,
) -> Result<Vec<RapSample>> {
    inc.validate()?;
    let (mu, _) = inc.moments();
    let field = SampledWeights { law, seed };
    let rn = (n as f64).sqrt();
    let scale = (n as f64).powf(-0.25);
    let obs: Vec<(i64, u64)> = points.iter().map(|p| observer(law, n, p)).collect();
    let mut out = Vec::with_capacity(points.len());
    for (p, &(y, steps)) in points.iter().zip(&obs) {
        let dl = dual_law(&field, y, steps, steps, 1e-18)?;
        let h = dl.mean();
        let (clo, c) = coefficients(&dl);
        let mut s = crate::harness::ExactSum::new();
        if !matches!(inc, IncrementLaw::Constant { .. }) {
            for (j, cj) in c.iter().enumerate() {
                if *cj != 0.0 {
                    s.add((inc.sample(seed, clo + j as i64) - mu) * cj);
                }
            }
        }
        let s = s.value();
        let ybar = scale * (mu * (h - p.r * rn) + s);
        let hbar = scale * (h - floor_robust(p.r * rn) as f64);
        out.push(RapSample { t: p.t, r: p.r, ybar, h, s, hbar, height: None });
    }
    if forward && !points.is_empty() {
        let (a, b) = law.range();
        let lo = obs.iter().map(|&(y, s)| y + a * s as i64).min().unwrap();
        let hi = obs.iter().map(|&(y, s)| y + b * s as i64).max().unwrap();
        let mut h = HeightField::from_increments(lo.min(0), hi.max(0), inc, seed)?;
        let mut order: Vec<usize> = (0..points.len()).collect();
        order.sort_by_key(|&i| obs[i].1);
        for i in order {
            while h.time < obs[i].1 {
                h = rap_step(&h, &field)?;
            }
            let v = h.get(obs[i].0).ok_or_else(|| Error::Window("observer left the height window".into()))?;
            out[i].height = Some(v);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Const(Vec<f64>, i64);
    impl WeightField for Const {
        fn range(&self) -> (i64, i64) {
            (self.1, self.1 + self.0.len() as i64 - 1)
        }
        fn fill(&self, _: i64, _: u64, out: &mut [f64]) {
            out.copy_from_slice(&self.0)
        }
    }

    #[test]
    fn identity_and_linear_updates() {
        let h = HeightField { lo: -5, heights: (-5..=5).map(|i| 2.0 * i as f64).collect(), time: 0 };
        let id = rap_step(&h, &Const(vec![1.0], 0)).unwrap();
        assert_eq!(id.heights, h.heights);
        let avg = rap_step(&h, &Const(vec![0.5, 0.5], -1)).unwrap();
        for k in avg.lo..=avg.hi() {
            assert!((avg.get(k).unwrap() - 2.0 * (k as f64 - 0.5)).abs() < 1e-14);
        }
        assert_eq!(avg.lo, -4);
    }

    #[test]
    fn window_exhaustion_is_an_error() {
        let h = HeightField { lo: 0, heights: vec![1.0, 2.0], time: 0 };
        let f = Const(vec![0.3, 0.4, 0.3], -1);
        assert!(matches!(rap_step(&h, &f), Err(Error::Window(_))));
    }

    #[test]
    fn dual_trivial_cases() {
        let f = Const(vec![0.25, 0.75], -1);
        assert_eq!(dual_quenched_mean(&f, 7, 10, 0).unwrap(), 7.0);
        let m = dual_quenched_mean(&f, 7, 10, 10).unwrap();
        assert!((m - (7.0 - 2.5)).abs() < 1e-12);
        assert!(dual_quenched_mean(&f, 7, 3, 4).is_err());
    }

    #[test]
    fn beta_kernels_and_kappa() {
        let law = WeightLaw::beta(1.0, 2.0).unwrap();
        let (q0, qb) = q_kernels(&law);
        // u ~ Beta(1,1): E[u(1−u)] = 1/2 − 1/3.
        let eu1u = 1.0 / 6.0;
        assert!((q0.at(1) - eu1u).abs() < 1e-15 && (q0.at(-1) - eu1u).abs() < 1e-15);
        assert!((q0.at(0) - (1.0 - 2.0 * eu1u)).abs() < 1e-15);
        assert!((qb.w.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!((q0.w.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        let k = kappa_const(&law, 64).unwrap();
        assert!((k.kappa - 0.5).abs() < 1e-12, "{}", k.kappa);
        assert_eq!(k.kappa_se, 0.0);
    }

    #[test]
    fn adjacent_support_potential_kernel_is_linear() {
        let law = WeightLaw::beta(2.0, 5.0).unwrap();
        let k = PerturbedKernel::new(&law, 50).unwrap();
        for x in 0..=50 {
            assert!((k.abar[x] - x as f64 / (2.0 * law.sigma1_sq)).abs() < 1e-10);
        }
    }

    #[test]
    fn deterministic_weights_have_zero_kappa() {
        let law = WeightLaw::new(WeightKind::Fixed { lo: -1, weights: vec![0.3, 0.7] }).unwrap();
        let k = kappa_const(&law, 32).unwrap();
        assert!(k.kappa.abs() < 1e-15);
    }

    #[test]
    fn span_two_rejected() {
        assert!(WeightLaw::new(WeightKind::Fixed { lo: -1, weights: vec![0.5, 0.0, 0.5] }).is_err());
    }

    #[test]
    fn constant_increments_give_zero_s() {
        let law = WeightLaw::beta(1.0, 2.0).unwrap();
        let inc = IncrementLaw::Constant { slope: 1.5 };
        let pts = [SpaceTimePoint::new(1.0, 0.3)];
        let s = simulate_rap_current(&law, &inc, 100, &pts, 4, true).unwrap();
        assert_eq!(s[0].s, 0.0);
        let y = observer(&law, 100, &pts[0]).0;
        // Linear initial heights stay linear in expectation along the dual walk.
        assert!((s[0].height.unwrap() - 1.5 * s[0].h).abs() < 1e-9 * (1.0 + y.abs() as f64));
    }
}

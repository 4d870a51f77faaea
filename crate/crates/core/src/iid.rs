//! Independent random walks: the current `Y_n(t,r)` seen by an observer moving
//! with the mean velocity, its exact finite-n moments, and a light-cone
//! simulator.

use crate::error::{domain, Error, Result};
use crate::gauss::SpaceTimePoint;
use crate::harness::ExactSum;
use crate::rng::{self, tag, CounterRng};
use rand_distr::{Distribution, Geometric, Poisson};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

/// Largest walk-law support we are willing to allocate.
const MAX_SUPPORT: usize = 1 << 25;

/// `floor` that ignores representation noise just below an integer, so that
/// e.g. `0.29 * 100` lands on 29.
pub fn floor_robust(x: f64) -> i64 {
    (x + 1e-9 * x.abs().max(1.0)).floor() as i64
}

/// Finite-range step distribution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JumpKernel {
    steps: Vec<i64>,
    probs: Vec<f64>,
}

impl JumpKernel {
    /// Build from `(step, probability)` pairs. Zero-probability entries are
    /// dropped; repeated steps are merged.
    pub fn new(pairs: &[(i64, f64)]) -> Result<Self> {
        let mut v: Vec<(i64, f64)> = Vec::new();
        let mut total = ExactSum::new();
        for &(x, p) in pairs {
            if !(p >= 0.0) || !p.is_finite() {
                return domain(format!("step probability must be finite and >= 0, got p({x})={p}"));
            }
            total.add(p);
            if p > 0.0 {
                match v.iter_mut().find(|e| e.0 == x) {
                    Some(e) => e.1 += p,
                    None => v.push((x, p)),
                }
            }
        }
        if (total.value() - 1.0).abs() > 1e-15 {
            return domain(format!("step probabilities sum to {}, not 1", total.value()));
        }
        v.sort_by_key(|e| e.0);
        Ok(JumpKernel { steps: v.iter().map(|e| e.0).collect(), probs: v.iter().map(|e| e.1).collect() })
    }

    /// Simple symmetric walk `p(±1) = ½`.
    pub fn symmetric() -> Self {
        Self::new(&[(-1, 0.5), (1, 0.5)]).expect("valid")
    }

    pub fn support(&self) -> impl Iterator<Item = (i64, f64)> + '_ {
        self.steps.iter().copied().zip(self.probs.iter().copied())
    }

    pub fn min_step(&self) -> i64 {
        self.steps[0]
    }

    pub fn max_step(&self) -> i64 {
        *self.steps.last().expect("nonempty")
    }

    /// Largest step size `R_max = max |x|`.
    pub fn range(&self) -> i64 {
        self.min_step().abs().max(self.max_step().abs())
    }

    /// gcd of the support differences; 0 for a one-point kernel.
    pub fn span(&self) -> u64 {
        let mut g = 0u64;
        for w in self.steps.windows(2) {
            g = gcd(g, (w[1] - w[0]) as u64);
        }
        g
    }
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Mean speed `v` and step variance `σ₁²`.
pub fn kernel_moments(k: &JumpKernel) -> (f64, f64) {
    let v: f64 = k.support().map(|(x, p)| x as f64 * p).sum();
    let s2 = k.support().map(|(x, p)| (x as f64 - v).powi(2) * p).sum();
    (v, s2)
}

/// Law of the walk position after a fixed number of steps, started at 0.
#[derive(Clone, Debug)]
pub struct WalkLaw {
    offset: i64,
    pmf: Vec<f64>,
    cdf: Vec<f64>,
    tail: Vec<f64>,
}

impl WalkLaw {
    fn from_pmf(offset: i64, mut pmf: Vec<f64>) -> Self {
        for p in &mut pmf {
            if *p < 0.0 {
                *p = 0.0;
            }
        }
        let mut cdf = Vec::with_capacity(pmf.len());
        let mut s = 0.0;
        for &p in &pmf {
            s += p;
            cdf.push(s);
        }
        let mut tail = vec![0.0; pmf.len()];
        let mut s = 0.0;
        for i in (0..pmf.len()).rev() {
            tail[i] = s;
            s += pmf[i];
        }
        WalkLaw { offset, pmf, cdf, tail }
    }

    pub fn min(&self) -> i64 {
        self.offset
    }

    pub fn max(&self) -> i64 {
        self.offset + self.pmf.len() as i64 - 1
    }

    pub fn prob(&self, x: i64) -> f64 {
        let i = x - self.offset;
        if i < 0 || i >= self.pmf.len() as i64 {
            0.0
        } else {
            self.pmf[i as usize]
        }
    }

    /// `P(X ≤ x)`.
    pub fn cdf(&self, x: i64) -> f64 {
        let i = x - self.offset;
        if i < 0 {
            0.0
        } else if i >= self.pmf.len() as i64 {
            1.0
        } else {
            self.cdf[i as usize]
        }
    }

    /// `P(X > x)`, summed from the right for accuracy.
    pub fn tail(&self, x: i64) -> f64 {
        let i = x - self.offset;
        if i < 0 {
            1.0
        } else if i >= self.pmf.len() as i64 {
            0.0
        } else {
            self.tail[i as usize]
        }
    }

    pub fn mass(&self) -> f64 {
        self.pmf.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.pmf.iter().enumerate().map(|(i, p)| (i as i64 + self.offset) as f64 * p).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (i64, f64)> + '_ {
        self.pmf.iter().enumerate().map(move |(i, &p)| (i as i64 + self.offset, p))
    }

    /// Inverse-CDF sample from a uniform `u ∈ [0,1)`.
    #[inline]
    pub fn sample(&self, u: f64) -> i64 {
        let total = *self.cdf.last().expect("nonempty");
        let i = self.cdf.partition_point(|&c| c <= u * total);
        self.offset + i.min(self.pmf.len() - 1) as i64
    }
}

/// Exact `steps`-fold convolution power of the kernel.
pub fn exact_walk_law(k: &JumpKernel, steps: u64) -> Result<WalkLaw> {
    let (lo, hi) = (k.min_step(), k.max_step());
    let width = (hi - lo) as u128 * steps as u128 + 1;
    if width > MAX_SUPPORT as u128 {
        return Err(Error::Resource(format!("walk law support {width} exceeds budget {MAX_SUPPORT}")));
    }
    let width = width as usize;
    let offset = lo * steps as i64;
    if steps == 0 {
        return Ok(WalkLaw::from_pmf(0, vec![1.0]));
    }
    let kw = (hi - lo) as usize + 1;
    let mut base = vec![0.0; kw];
    for (x, p) in k.support() {
        base[(x - lo) as usize] = p;
    }
    if (steps as usize).saturating_mul(width) <= 4_000_000 {
        let mut cur = vec![1.0];
        for _ in 0..steps {
            let mut next = vec![0.0; cur.len() + kw - 1];
            for (i, &a) in cur.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (j, &b) in base.iter().enumerate() {
                    next[i + j] += a * b;
                }
            }
            cur = next;
        }
        return Ok(WalkLaw::from_pmf(offset, cur));
    }
    let n = width.next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let mut buf: Vec<Complex<f64>> = vec![Complex::new(0.0, 0.0); n];
    for (j, &b) in base.iter().enumerate() {
        buf[j] = Complex::new(b, 0.0);
    }
    fwd.process(&mut buf);
    for z in buf.iter_mut() {
        *z = cpow(*z, steps);
    }
    inv.process(&mut buf);
    let scale = 1.0 / n as f64;
    let pmf: Vec<f64> = buf[..width].iter().map(|z| z.re * scale).collect();
    let mut law = WalkLaw::from_pmf(offset, pmf);
    // FFT noise sits around 1e-17 on the zero cells; suppress it so tail sums
    // of far-away cells stay exactly zero.
    for p in law.pmf.iter_mut() {
        if *p < 1e-15 * f64::EPSILON {
            *p = 0.0;
        }
    }
    Ok(WalkLaw::from_pmf(offset, std::mem::take(&mut law.pmf)))
}

fn cpow(mut z: Complex<f64>, mut e: u64) -> Complex<f64> {
    let mut acc = Complex::new(1.0, 0.0);
    while e > 0 {
        if e & 1 == 1 {
            acc *= z;
        }
        z *= z;
        e >>= 1;
    }
    acc
}

/// Law of the initial occupation variables.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum InitialLaw {
    Poisson { mu: f64 },
    Bernoulli { rho: f64 },
    /// Geometric on {0,1,2,...} with mean `m`.
    Geometric { m: f64 },
    /// Fixed occupations `values[j]` at site `origin + j`, zero elsewhere.
    Deterministic { origin: i64, values: Vec<u32> },
}

impl InitialLaw {
    pub fn validate(&self) -> Result<()> {
        match *self {
            InitialLaw::Poisson { mu } if !(mu >= 0.0 && mu.is_finite()) => domain("Poisson mean must be >= 0"),
            InitialLaw::Bernoulli { rho } if !(0.0..=1.0).contains(&rho) => domain("Bernoulli density must lie in [0,1]"),
            InitialLaw::Geometric { m } if !(m >= 0.0 && m.is_finite()) => domain("geometric mean must be >= 0"),
            _ => Ok(()),
        }
    }

    fn homogeneous(&self) -> bool {
        !matches!(self, InitialLaw::Deterministic { .. })
    }

    /// `(μ̄, σ₀²)` for the homogeneous kinds.
    pub fn moments(&self) -> Option<(f64, f64)> {
        match *self {
            InitialLaw::Poisson { mu } => Some((mu, mu)),
            InitialLaw::Bernoulli { rho } => Some((rho, rho * (1.0 - rho))),
            InitialLaw::Geometric { m } => Some((m, m * (1.0 + m))),
            InitialLaw::Deterministic { .. } => None,
        }
    }

    /// Mean and variance of the occupation at site `m`.
    pub fn site_moments(&self, m: i64) -> (f64, f64) {
        match self {
            InitialLaw::Deterministic { origin, values } => {
                let j = m - origin;
                if j >= 0 && (j as usize) < values.len() {
                    (values[j as usize] as f64, 0.0)
                } else {
                    (0.0, 0.0)
                }
            }
            other => other.moments().expect("homogeneous"),
        }
    }

    /// Occupation at site `m` for the configuration keyed by `seed`.
    pub fn sample(&self, seed: u64, m: i64) -> u64 {
        let r = || CounterRng::keyed(seed, &[tag::INIT, rng::site_tag(m)]);
        match self {
            InitialLaw::Poisson { mu } => {
                if *mu == 0.0 {
                    0
                } else {
                    Poisson::new(*mu).expect("validated").sample(&mut r()) as u64
                }
            }
            InitialLaw::Bernoulli { rho } => (r().next_unit() < *rho) as u64,
            InitialLaw::Geometric { m: mean } => {
                if *mean == 0.0 {
                    0
                } else {
                    Geometric::new(1.0 / (1.0 + mean)).expect("validated").sample(&mut r())
                }
            }
            InitialLaw::Deterministic { .. } => self.site_moments(m).0 as u64,
        }
    }
}

/// Range of walker start sites `[lo, hi]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatticeWindow {
    pub lo: i64,
    pub hi: i64,
}

/// Integer form of one observation point.
#[derive(Clone, Copy, Debug)]
struct Observer {
    steps: u64,
    /// Walkers count as "right of the observer" iff their position exceeds `k`.
    k: i64,
}

fn observers(k: &JumpKernel, n: u64, points: &[SpaceTimePoint]) -> Result<Vec<Observer>> {
    let (v, _) = kernel_moments(k);
    let sn = (n as f64).sqrt();
    points
        .iter()
        .map(|p| {
            if !(p.t >= 0.0) || !p.r.is_finite() {
                return domain(format!("bad observation point {p:?}"));
            }
            let nt = n as f64 * p.t;
            let steps = floor_robust(nt) as u64;
            // ⌊ntv⌋ + r√n compared with integer positions: X > thr ⟺ X > ⌊thr⌋.
            let k = floor_robust(floor_robust(nt * v) as f64 + p.r * sn);
            Ok(Observer { steps, k })
        })
        .collect()
}

/// Start sites whose walkers can influence some observer.
fn needed_range(k: &JumpKernel, obs: &[Observer]) -> Option<(i64, i64)> {
    let mut lo = i64::MAX;
    let mut hi = i64::MIN;
    for o in obs {
        let s = o.steps as i64;
        // m ≤ 0 can end above k only if m + max_step·s > k.
        let a = o.k - k.max_step() * s + 1;
        if a <= 0 {
            lo = lo.min(a);
            hi = hi.max(0);
        }
        // m > 0 can end at or below k only if m + min_step·s ≤ k.
        let b = o.k - k.min_step() * s;
        if b >= 1 {
            lo = lo.min(1);
            hi = hi.max(b);
        }
    }
    (lo <= hi).then_some((lo, hi))
}

impl LatticeWindow {
    /// Symmetric window `[-L, L]` with `L = max_i (|⌊nt_i v⌋ + r_i√n| + R_max ⌊nt_i⌋)`.
    pub fn covering(k: &JumpKernel, n: u64, points: &[SpaceTimePoint]) -> Result<Self> {
        let obs = observers(k, n, points)?;
        let l = obs.iter().map(|o| o.k.abs() + 1 + k.range() * o.steps as i64).max().unwrap_or(0);
        Ok(LatticeWindow { lo: -l, hi: l })
    }

    /// Smallest window that is exact for these observers.
    pub fn minimal(k: &JumpKernel, n: u64, points: &[SpaceTimePoint]) -> Result<Self> {
        let obs = observers(k, n, points)?;
        Ok(match needed_range(k, &obs) {
            Some((lo, hi)) => LatticeWindow { lo, hi },
            None => LatticeWindow { lo: 0, hi: 0 },
        })
    }
}

/// Raw and centered currents from one realization.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CurrentSample {
    pub n: u64,
    pub points: Vec<SpaceTimePoint>,
    pub values: Vec<i64>,
    pub centered_scaled: Vec<f64>,
}

/// Exact finite-n means and covariance matrix of `Y_n` at the given points.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CurrentMoments {
    pub means: Vec<f64>,
    pub cov: Vec<Vec<f64>>,
}

/// Exact moments from the random-sum covariance formula
/// `Cov = E K · Cov(f, g) + Var K · E f · E g`, summed over start sites.
pub fn exact_current_moments(
    k: &JumpKernel,
    law: &InitialLaw,
    n: u64,
    points: &[SpaceTimePoint],
) -> Result<CurrentMoments> {
    if points.len() > 8 {
        return Err(Error::Contract("exact moments support at most 8 points".into()));
    }
    law.validate()?;
    let obs = observers(k, n, points)?;
    let mut laws = std::collections::BTreeMap::new();
    laws.insert(0, exact_walk_law(k, 0)?);
    for o in &obs {
        if !laws.contains_key(&o.steps) {
            laws.insert(o.steps, exact_walk_law(k, o.steps)?);
        }
    }
    for (i, a) in obs.iter().enumerate() {
        for b in &obs[..i] {
            let d = a.steps.abs_diff(b.steps);
            if !laws.contains_key(&d) {
                laws.insert(d, exact_walk_law(k, d)?);
            }
        }
    }
    let m = obs.len();
    let mut means = vec![0.0; m];
    let mut cov = vec![vec![0.0; m]; m];
    if law.homogeneous() {
        let (mu, s0) = law.moments().expect("homogeneous");
        for i in 0..m {
            let w = &laws[&obs[i].steps];
            let ki = obs[i].k;
            // Σ_{m≤0} P(X^m > k) − Σ_{m>0} P(X^m ≤ k) over the nonzero ranges.
            let mut s = ExactSum::new();
            for st in (ki - w.max()).min(0)..=0 {
                s.add(w.tail(ki - st));
            }
            for st in 1..=(ki - w.min()).max(0) {
                s.add(-w.cdf(ki - st));
            }
            means[i] = mu * s.value();
        }
        for i in 0..m {
            for j in 0..=i {
                let c = homogeneous_cov(&obs[i], &obs[j], &laws, mu, s0);
                cov[i][j] = c;
                cov[j][i] = c;
            }
        }
    } else {
        let range = needed_range(k, &obs);
        if let Some((lo, hi)) = range {
            for st in lo..=hi {
                let (mu, s0) = law.site_moments(st);
                if mu == 0.0 && s0 == 0.0 {
                    continue;
                }
                let f: Vec<f64> = obs
                    .iter()
                    .map(|o| {
                        let w = &laws[&o.steps];
                        if st <= 0 {
                            w.tail(o.k - st)
                        } else {
                            w.cdf(o.k - st)
                        }
                    })
                    .collect();
                for i in 0..m {
                    means[i] += if st <= 0 { mu * f[i] } else { -mu * f[i] };
                    for j in 0..=i {
                        let joint = joint_single(&obs[i], &obs[j], &laws, st);
                        let c = mu * (joint - f[i] * f[j]) + s0 * f[i] * f[j];
                        // The sign flips of the m > 0 terms cancel in products.
                        cov[i][j] += c;
                        if i != j {
                            cov[j][i] += c;
                        }
                    }
                }
            }
        }
    }
    Ok(CurrentMoments { means, cov })
}

/// `P(A_i ∩ A_j)` for a walker from `st`, where `A` is "above k" for `st ≤ 0`
/// and "at or below k" for `st > 0`.
fn joint_single(a: &Observer, b: &Observer, laws: &std::collections::BTreeMap<u64, WalkLaw>, st: i64) -> f64 {
    let (e, l) = if a.steps <= b.steps { (a, b) } else { (b, a) };
    let first = &laws[&e.steps];
    let inc = &laws[&(l.steps - e.steps)];
    let mut s = 0.0;
    for (y, p) in first.iter() {
        if p == 0.0 {
            continue;
        }
        let x = st + y;
        s += if st <= 0 {
            if x > e.k {
                p * inc.tail(l.k - x)
            } else {
                0.0
            }
        } else if x <= e.k {
            p * inc.cdf(l.k - x)
        } else {
            0.0
        };
    }
    s
}

fn homogeneous_cov(
    a: &Observer,
    b: &Observer,
    laws: &std::collections::BTreeMap<u64, WalkLaw>,
    mu: f64,
    s0: f64,
) -> f64 {
    let (e, l) = if a.steps <= b.steps { (a, b) } else { (b, a) };
    let we = &laws[&e.steps];
    let wl = &laws[&l.steps];
    let inc = &laws[&(l.steps - e.steps)];
    // Joint sums collapse over the start site:
    //   Σ_{m≤0} P(X^m_e > k_e, X^m_l > k_l) = Σ_{x>k_e} P(X_e ≥ x) P(X_Δ > k_l − x)
    //   Σ_{m>0} P(X^m_e ≤ k_e, X^m_l ≤ k_l) = Σ_{x≤k_e} P(X_e ≤ x−1) P(X_Δ ≤ k_l − x)
    let mut ja = ExactSum::new();
    for x in (e.k + 1)..=we.max().max(e.k) {
        ja.add(we.tail(x - 1) * inc.tail(l.k - x));
    }
    let mut jb = ExactSum::new();
    for x in (we.min() + 1).min(e.k + 1)..=e.k {
        jb.add(we.cdf(x - 1) * inc.cdf(l.k - x));
    }
    let mut pa = ExactSum::new();
    let lo_a = (e.k - we.max()).max(l.k - wl.max()).min(0);
    for st in lo_a..=0 {
        pa.add(we.tail(e.k - st) * wl.tail(l.k - st));
    }
    let mut pb = ExactSum::new();
    let hi_b = (e.k - we.min()).min(l.k - wl.min()).max(0);
    for st in 1..=hi_b {
        pb.add(we.cdf(e.k - st) * wl.cdf(l.k - st));
    }
    let prod = pa.value() + pb.value();
    mu * (ja.value() + jb.value() - prod) + s0 * prod
}

/// Reusable simulator for one `(kernel, law, n, points)` setup.
#[derive(Clone, Debug)]
pub struct CurrentSim {
    n: u64,
    points: Vec<SpaceTimePoint>,
    law: InitialLaw,
    obs: Vec<Observer>,
    order: Vec<usize>,
    /// Law of the increment between consecutive sorted observation times.
    increments: Vec<WalkLaw>,
    window: LatticeWindow,
    means: Vec<f64>,
}

impl CurrentSim {
    pub fn new(
        k: &JumpKernel,
        law: &InitialLaw,
        n: u64,
        points: &[SpaceTimePoint],
        window: LatticeWindow,
    ) -> Result<Self> {
        law.validate()?;
        let obs = observers(k, n, points)?;
        if let Some((lo, hi)) = needed_range(k, &obs) {
            if window.lo > lo || window.hi < hi {
                return Err(Error::Window(format!(
                    "start window [{}, {}] misses sites [{lo}, {hi}] that can reach an observer",
                    window.lo, window.hi
                )));
            }
        }
        let mut order: Vec<usize> = (0..obs.len()).collect();
        order.sort_by_key(|&i| obs[i].steps);
        let mut increments = Vec::new();
        let mut prev = 0;
        for &i in &order {
            increments.push(exact_walk_law(k, obs[i].steps - prev)?);
            prev = obs[i].steps;
        }
        let means = if points.len() <= 8 {
            exact_current_moments(k, law, n, points)?.means
        } else {
            vec![f64::NAN; points.len()]
        };
        Ok(CurrentSim { n, points: points.to_vec(), law: law.clone(), obs, order, increments, window, means })
    }

    pub fn exact_means(&self) -> &[f64] {
        &self.means
    }

    pub fn sample(&self, seed: u64) -> CurrentSample {
        let m = self.obs.len();
        let mut y = vec![0i64; m];
        let mut pos = vec![0i64; m];
        for st in self.window.lo..=self.window.hi {
            let count = self.law.sample(seed, st);
            for w in 0..count {
                let key = rng::key(seed, &[tag::WALK, rng::site_tag(st), w]);
                let mut x = st;
                for (j, &i) in self.order.iter().enumerate() {
                    x += self.increments[j].sample(rng::unit(rng::word(key, j as u64)));
                    pos[i] = x;
                }
                for i in 0..m {
                    if st <= 0 && pos[i] > self.obs[i].k {
                        y[i] += 1;
                    } else if st > 0 && pos[i] <= self.obs[i].k {
                        y[i] -= 1;
                    }
                }
            }
        }
        let scale = (self.n as f64).powf(-0.25);
        let centered_scaled = y.iter().zip(&self.means).map(|(&v, &mu)| scale * (v as f64 - mu)).collect();
        CurrentSample { n: self.n, points: self.points.clone(), values: y, centered_scaled }
    }
}

/// One realization of `Y_n` at the given points.
pub fn simulate_current(
    k: &JumpKernel,
    law: &InitialLaw,
    n: u64,
    points: &[SpaceTimePoint],
    window: LatticeWindow,
    seed: u64,
) -> Result<CurrentSample> {
    Ok(CurrentSim::new(k, law, n, points, window)?.sample(seed))
}

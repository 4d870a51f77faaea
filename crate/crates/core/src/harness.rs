//! Replication, estimation and fitting.
//!
//! Sums are kept as exact floating-point expansions and rounded once on query,
//! so an accumulator's estimates depend only on the multiset of samples it has
//! seen. Any partition of the replicas, merged in any order, gives bit-identical
//! output.

use crate::error::{Error, Result};
use crate::rng::{self, CounterRng};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Exact sum of `f64` values (Shewchuk expansion), rounded correctly on demand.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ExactSum {
    partials: Vec<f64>,
}

impl ExactSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, mut x: f64) {
        let mut i = 0;
        for j in 0..self.partials.len() {
            let mut y = self.partials[j];
            if x.abs() < y.abs() {
                std::mem::swap(&mut x, &mut y);
            }
            let hi = x + y;
            let lo = y - (hi - x);
            if lo != 0.0 {
                self.partials[i] = lo;
                i += 1;
            }
            x = hi;
        }
        self.partials.truncate(i);
        self.partials.push(x);
    }

    pub fn merge(&mut self, other: &ExactSum) {
        for &p in &other.partials {
            self.add(p);
        }
    }

    /// The exact sum rounded to nearest.
    pub fn value(&self) -> f64 {
        let p = &self.partials;
        let mut n = p.len();
        if n == 0 {
            return 0.0;
        }
        n -= 1;
        let mut hi = p[n];
        let mut lo = 0.0;
        while n > 0 {
            let x = hi;
            n -= 1;
            let y = p[n];
            hi = x + y;
            let yr = hi - x;
            lo = y - yr;
            if lo != 0.0 {
                break;
            }
        }
        if n > 0 && ((lo < 0.0 && p[n - 1] < 0.0) || (lo > 0.0 && p[n - 1] > 0.0)) {
            let y = lo * 2.0;
            let x = hi + y;
            let yr = x - hi;
            if y == yr {
                hi = x;
            }
        }
        hi
    }
}

/// Mergeable moment accumulator over a fixed list of named observables.
///
/// Each observable may carry a centering constant `c`; the accumulator stores
/// sums of `x − c`, which keeps higher moments well conditioned when the
/// expected value is known in advance.
#[derive(Clone, Debug)]
pub struct Accumulator {
    names: Vec<String>,
    centers: Vec<f64>,
    count: u64,
    s1: Vec<ExactSum>,
    cross: Vec<ExactSum>,
    s3: Vec<ExactSum>,
    s4: Vec<ExactSum>,
    lo: Vec<f64>,
    hi: Vec<f64>,
}

#[inline]
fn tri(i: usize, j: usize) -> usize {
    let (a, b) = if i <= j { (i, j) } else { (j, i) };
    b * (b + 1) / 2 + a
}

impl Accumulator {
    pub fn new<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Self {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        let k = names.len();
        Accumulator {
            centers: vec![0.0; k],
            count: 0,
            s1: vec![ExactSum::new(); k],
            cross: vec![ExactSum::new(); k * (k + 1) / 2],
            s3: vec![ExactSum::new(); k],
            s4: vec![ExactSum::new(); k],
            lo: vec![f64::INFINITY; k],
            hi: vec![f64::NEG_INFINITY; k],
            names,
        }
    }

    /// Builder: set the centering constant of one observable.
    pub fn centered(mut self, name: &str, c: f64) -> Self {
        let i = self.index(name).expect("unknown observable");
        self.centers[i] = c;
        self
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn push(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.names.len() {
            return Err(Error::Contract(format!(
                "accumulator expects {} observables, got {}",
                self.names.len(),
                values.len()
            )));
        }
        let k = values.len();
        let mut c = [0.0f64; 64];
        let mut heap;
        let centered: &mut [f64] = if k <= 64 {
            &mut c[..k]
        } else {
            heap = vec![0.0; k];
            &mut heap
        };
        for i in 0..k {
            centered[i] = values[i] - self.centers[i];
        }
        for i in 0..k {
            let x = centered[i];
            self.lo[i] = self.lo[i].min(x);
            self.hi[i] = self.hi[i].max(x);
            self.s1[i].add(x);
            let x2 = x * x;
            self.s3[i].add(x2 * x);
            self.s4[i].add(x2 * x2);
            for j in 0..=i {
                self.cross[tri(i, j)].add(x * centered[j]);
            }
        }
        self.count += 1;
        Ok(())
    }

    pub fn merge(&mut self, other: &Accumulator) -> Result<()> {
        if self.names != other.names || self.centers != other.centers {
            return Err(Error::Contract("merging accumulators with different layouts".into()));
        }
        self.count += other.count;
        for (a, b) in self.s1.iter_mut().zip(&other.s1) {
            a.merge(b);
        }
        for (a, b) in self.cross.iter_mut().zip(&other.cross) {
            a.merge(b);
        }
        for (a, b) in self.s3.iter_mut().zip(&other.s3) {
            a.merge(b);
        }
        for (a, b) in self.s4.iter_mut().zip(&other.s4) {
            a.merge(b);
        }
        for i in 0..self.lo.len() {
            self.lo[i] = self.lo[i].min(other.lo[i]);
            self.hi[i] = self.hi[i].max(other.hi[i]);
        }
        Ok(())
    }

    /// Means, variances and covariances with standard errors.
    pub fn estimate(&self) -> Result<Estimates> {
        if self.count < 2 {
            return Err(Error::Contract(format!(
                "estimates need at least 2 replicas, have {}",
                self.count
            )));
        }
        let n = self.count as f64;
        let k = self.names.len();
        // A constant observable has mean equal to its value and zero spread;
        // rounding in the sums must not leak into either.
        let constant: Vec<bool> = (0..k).map(|i| self.lo[i] == self.hi[i]).collect();
        let m: Vec<f64> = (0..k)
            .map(|i| if constant[i] { self.lo[i] } else { self.s1[i].value() / n })
            .collect();
        let mut cov = vec![vec![0.0; k]; k];
        for i in 0..k {
            for j in 0..=i {
                let c = if constant[i] || constant[j] {
                    0.0
                } else {
                    (self.cross[tri(i, j)].value() - n * m[i] * m[j]) / (n - 1.0)
                };
                cov[i][j] = c;
                cov[j][i] = c;
            }
        }
        let mut var_se = vec![0.0; k];
        for i in 0..k {
            if constant[i] {
                continue;
            }
            let s2 = self.cross[tri(i, i)].value() / n;
            let (s3, s4) = (self.s3[i].value() / n, self.s4[i].value() / n);
            let mi = m[i];
            let m4 = s4 - 4.0 * mi * s3 + 6.0 * mi * mi * s2 - 3.0 * mi.powi(4);
            let v = cov[i][i];
            let var_of_var = (m4 - v * v * (n - 3.0) / (n - 1.0)) / n;
            var_se[i] = var_of_var.max(0.0).sqrt();
        }
        Ok(Estimates {
            names: self.names.clone(),
            count: self.count,
            mean: m.iter().zip(&self.centers).map(|(a, c)| a + c).collect(),
            centered_mean: m,
            cov,
            var_se,
        })
    }
}

/// Point estimates derived from an [`Accumulator`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Estimates {
    pub names: Vec<String>,
    pub count: u64,
    pub mean: Vec<f64>,
    centered_mean: Vec<f64>,
    /// Unbiased sample covariance matrix.
    pub cov: Vec<Vec<f64>>,
    /// Standard error of each sample variance (fourth-central-moment formula).
    pub var_se: Vec<f64>,
}

/// A value with its standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Measured {
    pub value: f64,
    pub se: f64,
}

impl Measured {
    /// `|value − target| ≤ k·se`.
    pub fn within(&self, target: f64, k: f64) -> bool {
        (self.value - target).abs() <= k * self.se
    }
}

impl Estimates {
    pub fn idx(&self, name: &str) -> usize {
        self.names
            .iter()
            .position(|n| n == name)
            .unwrap_or_else(|| panic!("unknown observable {name}"))
    }

    pub fn mean_of(&self, name: &str) -> Measured {
        let i = self.idx(name);
        Measured { value: self.mean[i], se: (self.cov[i][i] / self.count as f64).sqrt() }
    }

    pub fn var_of(&self, name: &str) -> Measured {
        let i = self.idx(name);
        Measured { value: self.cov[i][i], se: self.var_se[i] }
    }

    /// Sample covariance; the SE uses the normal-theory approximation
    /// `sqrt((v_x v_y + c²)/(n−1))`.
    pub fn cov_of(&self, a: &str, b: &str) -> Measured {
        let (i, j) = (self.idx(a), self.idx(b));
        let c = self.cov[i][j];
        let se = ((self.cov[i][i] * self.cov[j][j] + c * c) / (self.count as f64 - 1.0)).sqrt();
        Measured { value: c, se }
    }

    /// Mean of `Σ w_k x_k` with the SE implied by the joint covariance.
    pub fn combination(&self, weights: &[(&str, f64)]) -> Measured {
        let idx: Vec<(usize, f64)> = weights.iter().map(|(n, w)| (self.idx(n), *w)).collect();
        let value = idx.iter().map(|&(i, w)| w * self.mean[i]).sum();
        let mut v = 0.0;
        for &(i, wi) in &idx {
            for &(j, wj) in &idx {
                v += wi * wj * self.cov[i][j];
            }
        }
        Measured { value, se: (v.max(0.0) / self.count as f64).sqrt() }
    }

    /// Paired estimator `s²(a) − c·mean(y)` with its delta-method SE.
    ///
    /// `a` must be accumulated with some center `c_a`, and `w` must be the
    /// observable `(a − c_a)²` with zero center. The influence function of the
    /// sample variance is `(a − m)² = w − 2m(a − c_a) + m²`, so every term in
    /// the variance of the difference is a pairwise covariance.
    pub fn variance_minus_mean(&self, a: &str, w: &str, y: &str, c: f64) -> Measured {
        let (ia, iw, iy) = (self.idx(a), self.idx(w), self.idx(y));
        let m = self.centered_mean[ia];
        let cv = &self.cov;
        let var_sq = cv[iw][iw] + 4.0 * m * m * cv[ia][ia] - 4.0 * m * cv[iw][ia];
        let cov_sq_y = cv[iw][iy] - 2.0 * m * cv[ia][iy];
        let v = var_sq + c * c * cv[iy][iy] - 2.0 * c * cov_sq_y;
        Measured {
            value: cv[ia][ia] - c * self.mean[iy],
            se: (v.max(0.0) / self.count as f64).sqrt(),
        }
    }
}

/// Replica index → stream seed. `mix64` is a bijection, so distinct replicas
/// always get distinct seeds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedPolicy {
    pub master: u64,
}

impl SeedPolicy {
    pub fn new(master: u64) -> Self {
        SeedPolicy { master }
    }

    pub fn replica_seed(&self, replica: u64) -> u64 {
        rng::mix64(rng::key(self.master, &[rng::tag::REPLICA]) ^ replica)
    }
}

/// Run `n` replicas of `f(seed) -> observables` and accumulate them.
///
/// Replicas run on the current rayon pool. The result does not depend on the
/// pool size or on scheduling.
pub fn run_replicas<F>(template: &Accumulator, n: u64, policy: SeedPolicy, f: F) -> Result<Accumulator>
where
    F: Fn(u64) -> Result<Vec<f64>> + Sync,
{
    const CHUNK: u64 = 64;
    let chunks = n.div_ceil(CHUNK);
    let parts: Vec<Result<Accumulator>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut acc = template.clone();
            for r in c * CHUNK..((c + 1) * CHUNK).min(n) {
                let seed = policy.replica_seed(r);
                let v = f(seed).map_err(|e| annotate(e, r, seed))?;
                acc.push(&v)?;
            }
            Ok(acc)
        })
        .collect();
    let mut out = template.clone();
    for p in parts {
        out.merge(&p?)?;
    }
    Ok(out)
}

fn annotate(e: Error, replica: u64, seed: u64) -> Error {
    let tag = format!(" (replica {replica}, seed {seed})");
    match e {
        Error::Domain(m) => Error::Domain(m + &tag),
        Error::Contract(m) => Error::Contract(m + &tag),
        Error::Window(m) => Error::Window(m + &tag),
        Error::Resource(m) => Error::Resource(m + &tag),
        Error::Numeric(m) => Error::Numeric(m + &tag),
        Error::Config(m) => Error::Config(m + &tag),
    }
}

/// A log-log power-law fit.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SlopeFit {
    pub log_t: Vec<f64>,
    pub log_y: Vec<f64>,
    pub slope: f64,
    pub intercept: f64,
    /// Residual-bootstrap standard error of the slope.
    pub slope_se: f64,
}

fn wls(x: &[f64], y: &[f64], w: &[f64]) -> (f64, f64) {
    let sw: f64 = w.iter().sum();
    let mx = x.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let my = y.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    for i in 0..x.len() {
        sxy += w[i] * (x[i] - mx) * (y[i] - my);
        sxx += w[i] * (x[i] - mx) * (x[i] - mx);
    }
    let b = sxy / sxx;
    (b, my - b * mx)
}

/// Weighted least squares of `log y` on `log t`, weights `(y/se)²`.
///
/// `series` holds `(t, estimate, se)`; a zero SE gets unit weight.
pub fn fit_slope(series: &[(f64, f64, f64)], seed: u64) -> Result<SlopeFit> {
    if series.len() < 3 {
        return Err(Error::Contract("slope fit needs at least 3 points".into()));
    }
    for &(t, y, se) in series {
        if !(t > 0.0) || !(y > 0.0) || !(se >= 0.0) || !y.is_finite() {
            return Err(Error::Domain(format!("slope fit needs positive t and estimates, got ({t}, {y}, {se})")));
        }
    }
    let x: Vec<f64> = series.iter().map(|s| s.0.ln()).collect();
    let y: Vec<f64> = series.iter().map(|s| s.1.ln()).collect();
    let w: Vec<f64> = if series.iter().all(|s| s.2 > 0.0) {
        series.iter().map(|s| (s.1 / s.2).powi(2)).collect()
    } else {
        vec![1.0; series.len()]
    };
    let (slope, intercept) = wls(&x, &y, &w);
    // Studentized residuals resampled with replacement.
    let res: Vec<f64> = (0..x.len())
        .map(|i| (y[i] - intercept - slope * x[i]) * w[i].sqrt())
        .collect();
    let mut rng = CounterRng::keyed(seed, &[0x51_0be]);
    let b = 2000;
    let mut s = 0.0;
    let mut s2 = 0.0;
    let mut yb = vec![0.0; x.len()];
    for _ in 0..b {
        for i in 0..x.len() {
            let k = (rng.next_unit() * x.len() as f64) as usize;
            yb[i] = intercept + slope * x[i] + res[k.min(x.len() - 1)] / w[i].sqrt();
        }
        let (sb, _) = wls(&x, &yb, &w);
        s += sb;
        s2 += sb * sb;
    }
    let mb = s / b as f64;
    let slope_se = (s2 / b as f64 - mb * mb).max(0.0).sqrt();
    Ok(SlopeFit { log_t: x, log_y: y, slope, intercept, slope_se })
}

/// Result of [`normality_check`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Normality {
    pub distance: f64,
    pub threshold: f64,
    pub pass: bool,
}

/// Sup distance between the empirical CDF and the Gaussian with fitted mean and
/// variance, compared with the Lilliefors critical value at `level`
/// (0.10, 0.05 or 0.01).
///
/// For lattice-valued samples pass the spacing `h`: the Gaussian is then
/// compared at the cell boundaries `x + h/2` (continuity correction), and the
/// lattice variance `h²/12` is removed from the fitted variance.
pub fn normality_check(samples: &[f64], level: f64, lattice: Option<f64>) -> Result<Normality> {
    if samples.len() < 1000 {
        return Err(Error::Contract(format!("normality check needs >= 1000 samples, got {}", samples.len())));
    }
    let c = match level {
        l if (l - 0.10).abs() < 1e-12 => 0.805,
        l if (l - 0.05).abs() < 1e-12 => 0.886,
        l if (l - 0.01).abs() < 1e-12 => 1.031,
        _ => return Err(Error::Contract("level must be 0.10, 0.05 or 0.01".into())),
    };
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let mut var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let half = lattice.map(|h| {
        var = (var - h * h / 12.0).max(f64::MIN_POSITIVE);
        h / 2.0
    });
    let sd = var.sqrt();
    let phi = |x: f64| 0.5 * libm::erfc(-(x - mean) / (sd * std::f64::consts::SQRT_2));
    let mut d: f64 = 0.0;
    let mut i = 0;
    while i < xs.len() {
        let mut j = i;
        while j + 1 < xs.len() && xs[j + 1] == xs[i] {
            j += 1;
        }
        let below = i as f64 / n;
        let upto = (j + 1) as f64 / n;
        match half {
            Some(h) => {
                d = d.max((upto - phi(xs[i] + h)).abs()).max((below - phi(xs[i] - h)).abs());
            }
            None => {
                let f = phi(xs[i]);
                d = d.max((upto - f).abs()).max((f - below).abs());
            }
        }
        i = j + 1;
    }
    let threshold = c / n.sqrt();
    Ok(Normality { distance: d, threshold, pass: d < threshold })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_sum_is_order_free() {
        let xs = [1e16, 1.0, -1e16, 3.5, 1e-8, -2.25, 7e15, -7e15];
        let mut a = ExactSum::new();
        xs.iter().for_each(|&x| a.add(x));
        let mut b = ExactSum::new();
        xs.iter().rev().for_each(|&x| b.add(x));
        assert_eq!(a.value(), b.value());
        assert_eq!(a.value(), 1.0 + 3.5 + 1e-8 - 2.25);
    }

    #[test]
    fn two_values() {
        let mut acc = Accumulator::new(["x"]);
        acc.push(&[0.0]).unwrap();
        assert!(acc.estimate().is_err());
        acc.push(&[2.0]).unwrap();
        let e = acc.estimate().unwrap();
        assert_eq!(e.mean[0], 1.0);
        assert_eq!(e.cov[0][0], 2.0);
    }

    #[test]
    fn constant_has_zero_variance() {
        let mut acc = Accumulator::new(["x", "y"]);
        for i in 0..100 {
            acc.push(&[0.1, i as f64]).unwrap();
        }
        let e = acc.estimate().unwrap();
        assert_eq!(e.cov[0][0], 0.0);
        assert_eq!(e.cov_of("x", "x").value, e.var_of("x").value);
    }

    #[test]
    fn bernoulli_variance() {
        let mut rng = CounterRng::new(11);
        let mut acc = Accumulator::new(["b"]);
        for _ in 0..100_000 {
            acc.push(&[if rng.next_unit() < 0.5 { 1.0 } else { 0.0 }]).unwrap();
        }
        let v = acc.estimate().unwrap().var_of("b");
        assert!(v.within(0.25, 4.0), "{v:?}");
    }

    #[test]
    fn planted_slopes() {
        let s: Vec<_> = [64.0, 128.0, 256.0, 512.0, 1024.0f64]
            .iter()
            .map(|&t| (t, 5.0 * t.powf(2.0 / 3.0), 0.0))
            .collect();
        let f = fit_slope(&s, 1).unwrap();
        assert!((f.slope - 2.0 / 3.0).abs() < 1e-12);
        let s: Vec<_> = [1.0, 2.0, 4.0f64].iter().map(|&t| (t, 3.0 * t, 0.1)).collect();
        assert!((fit_slope(&s, 1).unwrap().slope - 1.0).abs() < 1e-12);
        assert!(fit_slope(&[(1.0, 1.0, 0.0), (2.0, -1.0, 0.0), (3.0, 1.0, 0.0)], 1).is_err());
    }
}

//! Exact finite-state tools: generators of small exclusion and zero-range
//! systems, transient laws by uniformization, and rate tables of the
//! couplings computed in exact rational arithmetic.
//!
//! The coupled generators and the rate tables are built from the same rule
//! functions the simulators call ([`Sites::apply`], [`band_widths`],
//! [`jump_bands`], the label refresh rules), so a clean diff certifies the
//! simulators' event logic, not a transcription of it.

use std::collections::{BTreeMap, HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::asep::{band_widths, Sites, Stream};
use crate::error::{domain, Error, Result};
use crate::real::{exact, Exact, Real};
use crate::zrp::{
    follow_second_class, joint_refresh, jump_bands, y_refresh, z_refresh, Jump, RateFamily, RateFn, SiteRates,
    Tracked, ZrpMeasure,
};

/// Largest state space the oracle will enumerate.
pub const MAX_STATES: usize = 1_000_000;

/// Geometry of a finite system.
///
/// For exclusion models a segment has closed ends. For zero-range models a
/// segment receives nothing at its left end and particles leaving the right
/// end are removed, which is what the simulator's window does.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Lattice {
    Ring { len: usize },
    Segment { len: usize },
}

impl Lattice {
    pub fn len(&self) -> usize {
        match *self {
            Lattice::Ring { len } | Lattice::Segment { len } => len,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Nearest-neighbour edges `(i, i+1)`.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        match *self {
            Lattice::Ring { len } => (0..len).map(|i| (i, (i + 1) % len)).collect(),
            Lattice::Segment { len } => (0..len.saturating_sub(1)).map(|i| (i, i + 1)).collect(),
        }
    }

    /// Target of a rightward jump from `i`, `None` when it leaves.
    fn right_of(&self, i: usize) -> Option<usize> {
        match *self {
            Lattice::Ring { len } => Some((i + 1) % len),
            Lattice::Segment { len } => (i + 1 < len).then_some(i + 1),
        }
    }
}

/// A small system to enumerate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum FiniteModel {
    /// All configurations with `particles` particles.
    Asep { p: f64, q: f64, lattice: Lattice, particles: usize },
    /// All configurations reachable from `initial`.
    Zrp { rate: RateFamily, lattice: Lattice, initial: Vec<u32> },
    /// Basic coupling of ordered members, reachable from the given start.
    CoupledAsep { p: f64, q: f64, lattice: Lattice, members: Vec<Vec<u8>> },
    /// Basic coupling `ω ≥ η`, reachable from the given start.
    CoupledZrp { rate: RateFamily, lattice: Lattice, omega: Vec<u32>, eta: Vec<u32> },
    /// `ζ ≥ ξ` with labels on `ζ − ξ` discrepancies, given as site indices.
    ConcavityCoupling { p: f64, q: f64, lattice: Lattice, zeta: Vec<u8>, xi: Vec<u8>, lambda: usize, mu: usize },
}

/// Sparse generator over enumerated states.
#[derive(Clone, Debug)]
pub struct Generator {
    pub states: Vec<Vec<i64>>,
    index: HashMap<Vec<i64>, usize>,
    /// Off-diagonal rates by row.
    pub rows: Vec<Vec<(usize, f64)>>,
}

type Step<'a> = dyn Fn(&[i64]) -> Result<Vec<(Vec<i64>, f64)>> + 'a;

fn explore(starts: Vec<Vec<i64>>, step: &Step) -> Result<Generator> {
    let mut index = HashMap::new();
    let mut states = Vec::new();
    let mut queue = VecDeque::new();
    for s in starts {
        if !index.contains_key(&s) {
            index.insert(s.clone(), states.len());
            states.push(s.clone());
            queue.push_back(s);
        }
    }
    let mut rows: Vec<Vec<(usize, f64)>> = Vec::new();
    while let Some(s) = queue.pop_front() {
        let mut row: BTreeMap<usize, f64> = BTreeMap::new();
        for (t, rate) in step(&s)? {
            if t == s || rate == 0.0 {
                continue;
            }
            if rate < 0.0 || !rate.is_finite() {
                return Err(Error::Numeric(format!("invalid rate {rate}")));
            }
            let k = match index.get(&t) {
                Some(&k) => k,
                None => {
                    if states.len() >= MAX_STATES {
                        return Err(Error::Resource(format!("state space exceeds {MAX_STATES} states")));
                    }
                    index.insert(t.clone(), states.len());
                    states.push(t.clone());
                    queue.push_back(t);
                    states.len() - 1
                }
            };
            *row.entry(k).or_insert(0.0) += rate;
        }
        rows.push(row.into_iter().collect());
    }
    Ok(Generator { states, index, rows })
}

fn asep_configs(len: usize, n: usize) -> Vec<Vec<i64>> {
    let mut out = Vec::new();
    for mask in 0u64..(1 << len) {
        if mask.count_ones() as usize == n {
            out.push((0..len).map(|i| ((mask >> i) & 1) as i64).collect());
        }
    }
    out
}

fn check_probs(p: f64, q: f64) -> Result<()> {
    if !(p >= 0.0 && q >= 0.0 && (p + q - 1.0).abs() < 1e-12) {
        return domain("exclusion rates need p, q >= 0 with p + q = 1");
    }
    Ok(())
}

fn to_sites(members: &[Vec<i64>], pair: (usize, usize), lambda: Option<usize>, mu: Option<usize>) -> Sites {
    Sites { members: members.iter().map(|m| m.iter().map(|&v| v as u8).collect()).collect(), pair, lambda, mu }
}

/// Rates of one coupled exclusion state from the simulator's rule set.
fn sites_moves<R: Real>(s: &Sites, edges: &[(usize, usize)], p: R, q: R) -> Vec<(Sites, R)> {
    let mut out = Vec::new();
    for &(i, j) in edges {
        for stream in [Stream::Main, Stream::AuxA, Stream::AuxB] {
            if stream != Stream::Main && !s.aux_active(stream, i, j) {
                continue;
            }
            for (band, w) in band_widths(stream, p, q) {
                let mut next = s.clone();
                if next.apply(stream, band, i, j).any() {
                    out.push((next, w));
                }
            }
        }
    }
    out
}

impl Generator {
    pub fn build(model: &FiniteModel) -> Result<Self> {
        match model {
            FiniteModel::Asep { p, q, lattice, particles } => {
                check_probs(*p, *q)?;
                let n = lattice.len();
                if n < 2 || n > 24 || *particles > n {
                    return domain("exclusion lattice needs 2..=24 sites and at most one particle per site");
                }
                let edges = lattice.edges();
                // Direct from the generator: 10 → 01 at p, 01 → 10 at q.
                let step = |s: &[i64]| -> Result<Vec<(Vec<i64>, f64)>> {
                    let mut out = Vec::new();
                    for &(i, j) in &edges {
                        let mut t = s.to_vec();
                        t.swap(i, j);
                        match (s[i], s[j]) {
                            (1, 0) => out.push((t, *p)),
                            (0, 1) => out.push((t, *q)),
                            _ => {}
                        }
                    }
                    Ok(out)
                };
                explore(asep_configs(n, *particles), &step)
            }
            FiniteModel::Zrp { rate, lattice, initial } => {
                let g = RateFn::new(rate.clone(), None)?;
                if initial.len() != lattice.len() || lattice.len() < 2 {
                    return domain("initial configuration must match the lattice");
                }
                let step = |s: &[i64]| -> Result<Vec<(Vec<i64>, f64)>> {
                    let mut out = Vec::new();
                    for i in 0..s.len() {
                        if s[i] == 0 {
                            continue;
                        }
                        let mut t = s.to_vec();
                        t[i] -= 1;
                        if let Some(j) = lattice.right_of(i) {
                            t[j] += 1;
                        }
                        out.push((t, g.g(s[i] as u32)));
                    }
                    Ok(out)
                };
                explore(vec![initial.iter().map(|&v| v as i64).collect()], &step)
            }
            FiniteModel::CoupledAsep { p, q, lattice, members } => {
                check_probs(*p, *q)?;
                let n = lattice.len();
                if members.is_empty() || members.iter().any(|m| m.len() != n) {
                    return domain("members must match the lattice");
                }
                let start = to_sites(&members.iter().map(|m| m.iter().map(|&v| v as i64).collect()).collect::<Vec<_>>(), (0, 1), None, None);
                start.check()?;
                let edges = lattice.edges();
                let step = |s: &[i64]| -> Result<Vec<(Vec<i64>, f64)>> {
                    let rows: Vec<Vec<i64>> = s.chunks(n).map(|c| c.to_vec()).collect();
                    let st = to_sites(&rows, (0, 1), None, None);
                    Ok(sites_moves(&st, &edges, *p, *q)
                        .into_iter()
                        .map(|(t, w)| (t.members.concat().into_iter().map(i64::from).collect(), w))
                        .collect())
                };
                explore(vec![members.concat().into_iter().map(i64::from).collect()], &step)
            }
            FiniteModel::CoupledZrp { rate, lattice, omega, eta } => {
                let g = RateFn::new(rate.clone(), None)?;
                let n = lattice.len();
                if omega.len() != n || eta.len() != n || omega.iter().zip(eta).any(|(w, e)| w < e) {
                    return domain("coupled zero-range start needs omega >= eta on the lattice");
                }
                let step = |s: &[i64]| -> Result<Vec<(Vec<i64>, f64)>> {
                    let (w, e) = s.split_at(n);
                    let mut out = Vec::new();
                    for i in 0..n {
                        for (kind, width) in jump_bands(g.g(e[i] as u32), g.g(w[i] as u32)) {
                            let mut t = s.to_vec();
                            let movers: &[usize] = match kind {
                                Jump::First => &[0, 1],
                                Jump::Second => &[0],
                                Jump::Idle => &[],
                            };
                            for &m in movers {
                                t[m * n + i] -= 1;
                                if let Some(j) = lattice.right_of(i) {
                                    t[m * n + j] += 1;
                                }
                            }
                            if !movers.is_empty() {
                                out.push((t, width));
                            }
                        }
                    }
                    Ok(out)
                };
                let start = omega.iter().chain(eta).map(|&v| v as i64).collect();
                explore(vec![start], &step)
            }
            FiniteModel::ConcavityCoupling { p, q, lattice, zeta, xi, lambda, mu } => {
                check_probs(*p, *q)?;
                if !(p > q) {
                    return domain("the label coupling needs p > q");
                }
                let n = lattice.len();
                if zeta.len() != n || xi.len() != n {
                    return domain("members must match the lattice");
                }
                let start = Sites { members: vec![zeta.clone(), xi.clone()], pair: (0, 1), lambda: Some(*lambda), mu: Some(*mu) };
                start.check()?;
                let edges = lattice.edges();
                let step = |s: &[i64]| -> Result<Vec<(Vec<i64>, f64)>> {
                    let st = decode_concavity(s, n);
                    Ok(sites_moves(&st, &edges, *p, *q).into_iter().map(|(t, w)| (encode_concavity(&t), w)).collect())
                };
                explore(vec![encode_concavity(&start)], &step)
            }
        }
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn index_of(&self, s: &[i64]) -> Option<usize> {
        self.index.get(s).copied()
    }

    pub fn exit_rate(&self, i: usize) -> f64 {
        self.rows[i].iter().map(|r| r.1).sum()
    }

    /// Rate from state `a` to state `b` (off-diagonal).
    pub fn rate(&self, a: usize, b: usize) -> f64 {
        self.rows[a].iter().find(|r| r.0 == b).map_or(0.0, |r| r.1)
    }

    /// `Gf`.
    pub fn right_apply(&self, f: &[f64]) -> Vec<f64> {
        self.rows.iter().enumerate().map(|(i, row)| row.iter().map(|&(j, r)| r * (f[j] - f[i])).sum()).collect()
    }

    /// Largest `|Σ_j G_ij|` with the diagonal included.
    pub fn max_row_sum(&self) -> f64 {
        self.right_apply(&vec![1.0; self.len()]).iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    /// `πG`.
    pub fn left_apply(&self, pi: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        for (i, row) in self.rows.iter().enumerate() {
            let mut exit = 0.0;
            for &(j, r) in row {
                out[j] += pi[i] * r;
                exit += r;
            }
            out[i] -= pi[i] * exit;
        }
        out
    }

    /// `μ e^{tG}` by uniformization at rate `max exit + 1`, in chunks with
    /// `Λ dt ≤ 32` and the Poisson series cut where its tail is below 1e-13.
    pub fn transient_law(&self, init: &[f64], t: f64) -> Result<Vec<f64>> {
        if init.len() != self.len() {
            return Err(Error::Contract("initial law has the wrong length".into()));
        }
        if !(t >= 0.0) {
            return domain("time must be nonnegative");
        }
        let lambda = (0..self.len()).map(|i| self.exit_rate(i)).fold(0.0, f64::max) + 1.0;
        let chunks = (lambda * t / 32.0).ceil().max(1.0) as usize;
        let dt = t / chunks as f64;
        let mut v = init.to_vec();
        for _ in 0..chunks {
            let mut term = v.clone();
            let mut weight = (-lambda * dt).exp();
            let mut out: Vec<f64> = term.iter().map(|x| x * weight).collect();
            let mut mass = weight;
            let mut k = 0u64;
            while 1.0 - mass > 1e-13 {
                k += 1;
                // term ← term·P with P = I + G/Λ.
                let g = self.left_apply(&term);
                for (a, b) in term.iter_mut().zip(&g) {
                    *a += b / lambda;
                }
                weight *= lambda * dt / k as f64;
                mass += weight;
                for (o, x) in out.iter_mut().zip(&term) {
                    *o += weight * x;
                }
                if k > 10_000 {
                    return Err(Error::Numeric("uniformization series did not converge".into()));
                }
            }
            v = out;
        }
        Ok(v)
    }

    /// Point mass on a state.
    pub fn delta(&self, s: &[i64]) -> Result<Vec<f64>> {
        let i = self.index_of(s).ok_or_else(|| Error::Contract("state not in the enumeration".into()))?;
        let mut v = vec![0.0; self.len()];
        v[i] = 1.0;
        Ok(v)
    }

    /// Empirical law of sampled states; unknown states are an error.
    pub fn empirical(&self, samples: &[Vec<i64>]) -> Result<Vec<f64>> {
        let mut v = vec![0.0; self.len()];
        for s in samples {
            let i = self.index_of(s).ok_or_else(|| Error::Numeric(format!("sampled state {s:?} is unreachable")))?;
            v[i] += 1.0;
        }
        let n = samples.len().max(1) as f64;
        v.iter_mut().for_each(|x| *x /= n);
        Ok(v)
    }
}

pub fn total_variation(a: &[f64], b: &[f64]) -> f64 {
    0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
}

/// `ζ`, `ξ`, then the label sites.
pub fn encode_concavity(s: &Sites) -> Vec<i64> {
    let mut v: Vec<i64> = s.members.concat().into_iter().map(i64::from).collect();
    v.push(s.lambda.map_or(-1, |x| x as i64));
    v.push(s.mu.map_or(-1, |x| x as i64));
    v
}

pub fn decode_concavity(v: &[i64], n: usize) -> Sites {
    let lab = |x: i64| (x >= 0).then_some(x as usize);
    Sites {
        members: vec![v[..n].iter().map(|&x| x as u8).collect(), v[n..2 * n].iter().map(|&x| x as u8).collect()],
        pair: (0, 1),
        lambda: lab(v[2 * n]),
        mu: lab(v[2 * n + 1]),
    }
}

/// Outcome of an exact rate-table comparison.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateDiff {
    pub name: String,
    pub states: usize,
    pub entries: usize,
    pub mismatches: Vec<String>,
}

impl RateDiff {
    fn new(name: &str) -> Self {
        RateDiff { name: name.into(), states: 0, entries: 0, mismatches: Vec::new() }
    }

    pub fn passed(&self) -> bool {
        self.mismatches.is_empty() && self.entries > 0
    }

    fn compare<K: Ord + std::fmt::Debug>(&mut self, ctx: &str, sim: &BTreeMap<K, Exact>, reference: &BTreeMap<K, Exact>) {
        self.states += 1;
        let keys: std::collections::BTreeSet<&K> = sim.keys().chain(reference.keys()).collect();
        for k in keys {
            self.entries += 1;
            let a = sim.get(k).copied().unwrap_or_else(Exact::zero);
            let b = reference.get(k).copied().unwrap_or_else(Exact::zero);
            if a != b {
                self.mismatches.push(format!("{ctx}: {k:?} simulator {a} reference {b}"));
            }
        }
    }
}

fn add<K: Ord>(m: &mut BTreeMap<K, Exact>, k: K, r: Exact) {
    if !r.is_zero() {
        let e = m.entry(k).or_insert_with(Exact::zero);
        *e = *e + r;
    }
}

const BLOCK: usize = 3;

fn blocks() -> Vec<Vec<u8>> {
    (0u8..(1 << BLOCK)).map(|m| (0..BLOCK).map(|i| (m >> i) & 1).collect()).collect()
}

fn block_edges() -> Vec<(usize, usize)> {
    (0..BLOCK - 1).map(|i| (i, i + 1)).collect()
}

/// Reference table of an exclusion process with one second-class particle:
/// across each edge 10→01, 20→02, 12→21 at `p` and the reverses at `q`.
fn second_class_reference(sigma: &[u8], p: Exact, q: Exact) -> BTreeMap<Vec<u8>, Exact> {
    let mut m = BTreeMap::new();
    for (i, j) in block_edges() {
        let (x, y) = (sigma[i], sigma[j]);
        // Higher class moves through lower: 1 before 2 before 0.
        let rank = |c: u8| match c {
            1 => 0,
            2 => 1,
            _ => 2,
        };
        if x == y {
            continue;
        }
        let mut t = sigma.to_vec();
        t.swap(i, j);
        let r = if rank(x) < rank(y) { p } else { q };
        add(&mut m, t, r);
    }
    m
}

/// Basic coupling on 3-site blocks: each member is an exclusion process and a
/// single discrepancy moves as a second-class particle.
pub fn asep_basic_diff(p: Exact, q: Exact) -> RateDiff {
    let mut d = RateDiff::new("basic coupling: member marginals and (eta, Q)");
    for upper in blocks() {
        for lower in blocks() {
            if upper.iter().zip(&lower).any(|(a, b)| a < b) {
                continue;
            }
            let s = Sites { members: vec![upper.clone(), lower.clone()], pair: (0, 1), lambda: None, mu: None };
            let moves = sites_moves(&s, &block_edges(), p, q);
            for m in 0..2 {
                let mut sim = BTreeMap::new();
                for (t, w) in &moves {
                    if t.members[m] != s.members[m] {
                        add(&mut sim, t.members[m].clone(), *w);
                    }
                }
                let mut reference = BTreeMap::new();
                for (i, j) in block_edges() {
                    let mut t = s.members[m].clone();
                    t.swap(i, j);
                    match (s.members[m][i], s.members[m][j]) {
                        (1, 0) => add(&mut reference, t, p),
                        (0, 1) => add(&mut reference, t, q),
                        _ => {}
                    }
                }
                d.compare(&format!("member {m} of {upper:?}/{lower:?}"), &sim, &reference);
            }
            let disc: Vec<usize> = (0..BLOCK).filter(|&i| upper[i] != lower[i]).collect();
            if disc.len() == 1 {
                let sigma = |s: &Sites| -> Vec<u8> { (0..BLOCK).map(|i| if s.x(i) { 2 } else { s.members[1][i] }).collect() };
                let mut sim = BTreeMap::new();
                for (t, w) in &moves {
                    add(&mut sim, sigma(t), *w);
                }
                d.compare(&format!("pair {upper:?}/{lower:?}"), &sim, &second_class_reference(&sigma(&s), p, q));
            }
        }
    }
    d
}

/// Label coupling in ordinal form: the label indices into the sorted
/// discrepancy positions.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
struct Ordinal {
    zeta: Vec<u8>,
    xi: Vec<u8>,
    lambda: usize,
    mu: usize,
}

fn discrepancies(zeta: &[u8], xi: &[u8]) -> Vec<usize> {
    (0..zeta.len()).filter(|&i| zeta[i] == 1 && xi[i] == 0).collect()
}

fn ordinal_of(s: &Sites) -> Ordinal {
    let xs = discrepancies(&s.members[0], &s.members[1]);
    let idx = |site: usize| xs.iter().position(|&x| x == site).expect("label off the discrepancies");
    Ordinal { zeta: s.members[0].clone(), xi: s.members[1].clone(), lambda: idx(s.lambda.unwrap()), mu: idx(s.mu.unwrap()) }
}

/// Reference transitions written from the coupling's rules: basic-coupling
/// moves carry labels with their discrepancy, and the label rules (i)–(iii)
/// act when the neighbouring discrepancy is adjacent.
fn concavity_reference(o: &Ordinal, p: Exact, q: Exact) -> BTreeMap<Ordinal, Exact> {
    let mut m = BTreeMap::new();
    for (i, j) in block_edges() {
        for (from, to, r) in [(i, j, p), (j, i, q)] {
            let mut t = o.clone();
            let mut moved = false;
            for occ in [&mut t.zeta, &mut t.xi] {
                if occ[from] == 1 && occ[to] == 0 {
                    occ[from] = 0;
                    occ[to] = 1;
                    moved = true;
                }
            }
            if moved {
                add(&mut m, t, r);
            }
        }
    }
    let xs = discrepancies(&o.zeta, &o.xi);
    let adj_up = |k: usize| k + 1 < xs.len() && xs[k + 1] == xs[k] + 1;
    let adj_down = |k: usize| k > 0 && xs[k - 1] + 1 == xs[k];
    let with = |l: usize, u: usize| Ordinal { lambda: l, mu: u, ..o.clone() };
    let (l, u) = (o.lambda, o.mu);
    if l == u {
        if adj_up(l) {
            add(&mut m, with(l, u + 1), p - q);
            add(&mut m, with(l + 1, u + 1), q);
        }
        if adj_down(l) {
            add(&mut m, with(l - 1, u), p - q);
            add(&mut m, with(l - 1, u - 1), q);
        }
    } else {
        if adj_up(l) {
            add(&mut m, with(l + 1, u), q);
        }
        if adj_down(l) {
            add(&mut m, with(l - 1, u), p);
        }
        if adj_up(u) {
            add(&mut m, with(l, u + 1), p);
        }
        if adj_down(u) {
            add(&mut m, with(l, u - 1), q);
        }
    }
    m
}

/// Every 3-site block of the label coupling: the full table against rules
/// (i)–(iii), both `(ζ⁻, Q^ζ)` and `(ξ, Q^ξ)` against the second-class table,
/// and the exchange of two adjacent discrepancies.
pub fn asep_concavity_diff(p: Exact, q: Exact) -> Vec<RateDiff> {
    let mut full = RateDiff::new("label coupling: rules (i)-(iii)");
    let mut lower = RateDiff::new("label coupling: (zeta-, Q^zeta) marginal");
    let mut upper = RateDiff::new("label coupling: (xi, Q^xi) marginal");
    let mut exchange = RateDiff::new("label coupling: exchange of adjacent discrepancies");
    for zeta in blocks() {
        for xi in blocks() {
            if zeta.iter().zip(&xi).any(|(a, b)| a < b) {
                continue;
            }
            let xs = discrepancies(&zeta, &xi);
            for (a, &ls) in xs.iter().enumerate() {
                for &ms in &xs[a..] {
                    let s = Sites { members: vec![zeta.clone(), xi.clone()], pair: (0, 1), lambda: Some(ls), mu: Some(ms) };
                    let moves = sites_moves(&s, &block_edges(), p, q);
                    let mut sim = BTreeMap::new();
                    for (t, w) in &moves {
                        add(&mut sim, ordinal_of(t), *w);
                    }
                    let o = ordinal_of(&s);
                    full.compare(&format!("{o:?}"), &sim, &concavity_reference(&o, p, q));

                    // (ζ⁻, X_λ): 1 = ζ⁻ particle, 2 = X_λ.
                    let sig_l = |t: &Sites| -> Vec<u8> {
                        let l = t.lambda.unwrap();
                        (0..BLOCK).map(|i| if i == l { 2 } else { t.members[0][i] }).collect()
                    };
                    // (ξ, X_μ): 1 = ξ particle, 2 = X_μ.
                    let sig_u = |t: &Sites| -> Vec<u8> {
                        let m = t.mu.unwrap();
                        (0..BLOCK).map(|i| if i == m { 2 } else { t.members[1][i] }).collect()
                    };
                    for (diff, sig) in [(&mut lower, &sig_l as &dyn Fn(&Sites) -> Vec<u8>), (&mut upper, &sig_u)] {
                        let mut sim = BTreeMap::new();
                        for (t, w) in &moves {
                            if sig(t) != sig(&s) {
                                add(&mut sim, sig(t), *w);
                            }
                        }
                        diff.compare(&format!("{o:?}"), &sim, &second_class_reference(&sig(&s), p, q));
                    }

                    // Both sites of an edge hold discrepancies and one is X_λ.
                    for (i, j) in block_edges() {
                        if !(s.x(i) && s.x(j) && (ls == i || ls == j)) {
                            continue;
                        }
                        let mut sim = BTreeMap::new();
                        for (t, w) in &moves {
                            let l = t.lambda.unwrap();
                            if l != ls && (l == i || l == j) {
                                add(&mut sim, l, *w);
                            }
                        }
                        let mut reference = BTreeMap::new();
                        // 12 → 21 at p when X_λ is on the right; 21 → 12 at q.
                        if ls == j {
                            add(&mut reference, i, p);
                        } else {
                            add(&mut reference, j, q);
                        }
                        exchange.compare(&format!("{o:?} edge ({i},{j})"), &sim, &reference);
                    }
                }
            }
        }
    }
    vec![full, lower, upper, exchange]
}

/// A rational rate table, `g(1..=n)` then constant, checked concave.
pub fn exact_rates(values: &[Exact]) -> Result<impl Fn(u32) -> Exact + Clone + '_> {
    if values.is_empty() {
        return domain("rate table needs g(1)");
    }
    let g = move |k: u32| if k == 0 { Exact::zero() } else { values[(k as usize - 1).min(values.len() - 1)] };
    Ok(g)
}

fn site_rates<G: Fn(u32) -> Exact>(g: &G, w: u32, e: u32) -> SiteRates<Exact> {
    SiteRates { g_eta: g(e), g_eta1: g(e + 1), g_omega1: g(w.saturating_sub(1)), g_omega: g(w) }
}

/// Zero-range label rules on 3-site blocks with occupations up to `cap`.
///
/// The label's position inside its site is distributed by its refresh rule,
/// which is its law between refreshes. Averaging the coupled rates over it,
/// `(ω − δ_{X_y}, ω)` and `(η, η + δ_{X_z})` must show basic-coupling rates.
/// The joint rule must have nonnegative weights that telescope to
/// `g(ω_i) − g(η_i)`, keep `y ≤ z`, and reproduce both single-label rules.
pub fn zrp_label_diff(values: &[Exact], cap: u32) -> Result<Vec<RateDiff>> {
    let g = exact_rates(values)?;
    let mut dy = RateDiff::new("zero-range (omega-, omega) via y");
    let mut dz = RateDiff::new("zero-range (eta, eta+) via z");
    let mut dj = RateDiff::new("zero-range joint label rule");
    let one = Exact::one();
    let mut blocks = vec![vec![]];
    for _ in 0..BLOCK {
        let mut next = Vec::new();
        for b in &blocks {
            for w in 0..=cap {
                for e in 0..=w {
                    let mut v: Vec<(u32, u32)> = b.clone();
                    v.push((w, e));
                    next.push(v);
                }
            }
        }
        blocks = next;
    }
    for block in &blocks {
        let (omega, eta): (Vec<u32>, Vec<u32>) = block.iter().copied().unzip();
        for s in 0..BLOCK {
            let d = (omega[s] - eta[s]) as i64;
            if d == 0 {
                continue;
            }
            let rates = site_rates(&g, omega[s], eta[s]);
            let (a, b) = (0i64, d - 1);
            let ctx = format!("omega {omega:?} eta {eta:?} label site {s}");

            // y: outcomes "both jump" and "only omega jumps" at each site.
            let mut sim = BTreeMap::new();
            for (py, label) in y_refresh(&rates, a, b) {
                let tracked = Tracked { label, site: s, a };
                for i in 0..BLOCK {
                    for (kind, width) in jump_bands(g(eta[i]), g(omega[i])) {
                        let r = py * width;
                        match kind {
                            Jump::First => add(&mut sim, (i, "both"), r),
                            Jump::Second => {
                                let mut t = tracked;
                                follow_second_class(&mut t, i, i + 1, (omega[i] - eta[i]) as i64);
                                let tag = if t.site != tracked.site && i == s { "upper only" } else { "both" };
                                add(&mut sim, (i, tag), r);
                            }
                            Jump::Idle => {}
                        }
                    }
                }
            }
            let mut reference = BTreeMap::new();
            for i in 0..BLOCK {
                let minus = omega[i] - (i == s) as u32;
                add(&mut reference, (i, "both"), g(minus));
                add(&mut reference, (i, "upper only"), g(omega[i]) - g(minus));
            }
            dy.compare(&ctx, &sim, &reference);

            // z: outcomes "both jump" and "only eta+ jumps".
            let mut sim = BTreeMap::new();
            for (pz, label) in z_refresh(&rates, b) {
                let tracked = Tracked { label, site: s, a };
                for i in 0..BLOCK {
                    for (kind, width) in jump_bands(g(eta[i]), g(omega[i])) {
                        let r = pz * width;
                        match kind {
                            Jump::First => add(&mut sim, (i, "both"), r),
                            Jump::Second => {
                                let mut t = tracked;
                                follow_second_class(&mut t, i, i + 1, (omega[i] - eta[i]) as i64);
                                if t.site != tracked.site && i == s {
                                    add(&mut sim, (i, "upper only"), r);
                                }
                            }
                            Jump::Idle => {}
                        }
                    }
                }
            }
            let mut reference = BTreeMap::new();
            for i in 0..BLOCK {
                let plus = eta[i] + (i == s) as u32;
                add(&mut reference, (i, "both"), g(eta[i]));
                add(&mut reference, (i, "upper only"), g(plus) - g(eta[i]));
            }
            dz.compare(&ctx, &sim, &reference);

            // Joint rule.
            let total = rates.g_omega - rates.g_eta;
            match joint_refresh(&rates, a, b) {
                Err(p2) => dj.mismatches.push(format!("{ctx}: negative middle weight {p2}")),
                Ok(out) => {
                    let mut sim = BTreeMap::new();
                    let scale = if total.is_zero() { one } else { total };
                    for (pr, (ny, nz)) in out {
                        if pr < Exact::zero() {
                            dj.mismatches.push(format!("{ctx}: negative weight {pr}"));
                        }
                        if !pr.is_zero() && ny > nz {
                            dj.mismatches.push(format!("{ctx}: order lost at ({ny},{nz})"));
                        }
                        add(&mut sim, "total", pr * scale);
                        if ny == a {
                            add(&mut sim, "y bottom", pr);
                        }
                        if nz == b {
                            add(&mut sim, "z top", pr);
                        }
                    }
                    let mut reference = BTreeMap::new();
                    add(&mut reference, "total", scale);
                    // Single-label rules, read off by label value.
                    let mut y_bottom = Exact::zero();
                    for (pr, l) in y_refresh(&rates, a, b) {
                        if l == a {
                            y_bottom = y_bottom + pr;
                        }
                    }
                    let mut z_top = Exact::zero();
                    for (pr, l) in z_refresh(&rates, b) {
                        if l == b {
                            z_top = z_top + pr;
                        }
                    }
                    add(&mut reference, "y bottom", y_bottom);
                    add(&mut reference, "z top", z_top);
                    dj.compare(&ctx, &sim, &reference);
                }
            }
        }
    }
    Ok(vec![dy, dz, dj])
}

/// `∫ Lφ dν^ρ` for `φ = 1{η_0 = a, η_1 = b}` on the infinite line, summed over
/// the truncated support. Returns the largest absolute value over
/// `a, b ≤ cap` and the neglected mass bound.
pub fn zrp_cylinder_balance(g: &RateFn, nu: &ZrpMeasure, cap: u32) -> (f64, f64) {
    let k = nu.pmf.len();
    let pmf = |x: i64| if x < 0 || x as usize >= k { 0.0 } else { nu.pmf[x as usize] };
    let mut worst: f64 = 0.0;
    for a in 0..=cap as i64 {
        for b in 0..=cap as i64 {
            let phi = |x0: i64, x1: i64| (x0 == a && x1 == b) as u8 as f64;
            let mut s = 0.0;
            for xm in 0..k as i64 {
                for x0 in 0..k as i64 {
                    for x1 in 0..k as i64 {
                        let w = pmf(xm) * pmf(x0) * pmf(x1);
                        if w == 0.0 {
                            continue;
                        }
                        let base = phi(x0, x1);
                        // −1 → 0, 0 → 1, 1 → 2.
                        s += w * g.g(xm as u32) * (phi(x0 + 1, x1) - base);
                        if x0 > 0 {
                            s += w * g.g(x0 as u32) * (phi(x0 - 1, x1 + 1) - base);
                        }
                        if x1 > 0 {
                            s += w * g.g(x1 as u32) * (phi(x0, x1 - 1) - base);
                        }
                    }
                }
            }
            worst = worst.max(s.abs());
        }
    }
    (worst, 3.0 * nu.tail_mass)
}

/// The canonical law `∏ 1/g(η_i)!` on a zero-range ring with fixed particles.
pub fn zrp_canonical(gen: &Generator, g: &RateFn) -> Vec<f64> {
    let w: Vec<f64> = gen
        .states
        .iter()
        .map(|s| s.iter().map(|&x| (1..=x as u32).map(|k| 1.0 / g.g(k)).product::<f64>()).product())
        .collect();
    let z: f64 = w.iter().sum();
    w.iter().map(|x| x / z).collect()
}

/// Exact `p, q` for the oracle checks.
pub fn exact_pq(p_num: i128, den: i128) -> (Exact, Exact) {
    (exact(p_num, den), exact(den - p_num, den))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_site_ring() {
        let m = FiniteModel::Asep { p: 0.7, q: 0.3, lattice: Lattice::Ring { len: 2 }, particles: 1 };
        let g = Generator::build(&m).unwrap();
        assert_eq!(g.len(), 2);
        // Both edges connect the two states: p across one, q across the other.
        assert!((g.rate(0, 1) - 1.0).abs() < 1e-15);
        let law = g.transient_law(&g.delta(&[1, 0]).unwrap(), 0.4).unwrap();
        let i = g.index_of(&[1, 0]).unwrap();
        assert!((law[i] - (0.5 + 0.5 * (-2.0f64 * 0.4).exp())).abs() < 1e-10);
    }

    #[test]
    fn zero_time_is_identity() {
        let m = FiniteModel::Asep { p: 0.7, q: 0.3, lattice: Lattice::Ring { len: 4 }, particles: 2 };
        let g = Generator::build(&m).unwrap();
        let init = g.delta(&[1, 1, 0, 0]).unwrap();
        assert_eq!(g.transient_law(&init, 0.0).unwrap(), init);
    }

    #[test]
    fn rule_one_rates() {
        let (p, q) = exact_pq(7, 10);
        let o = Ordinal { zeta: vec![1, 1, 0], xi: vec![0, 0, 0], lambda: 0, mu: 0 };
        let r = concavity_reference(&o, p, q);
        assert_eq!(r[&Ordinal { mu: 1, ..o.clone() }], p - q);
        assert_eq!(r[&Ordinal { lambda: 1, mu: 1, ..o.clone() }], q);
    }
}

//! Asymmetric simple exclusion on a finite window of Z, or on a ring.
//!
//! Every edge `{i, i+1}` carries one rate-1 Poisson stream. An event's mark
//! `u` picks the direction: `u < p` is an attempt `i → i+1`, otherwise
//! `i+1 → i`. This is the superposition of the rate-`p` and rate-`q` directed
//! clocks of the graphical construction. Two further rate-1 streams per edge
//! (`AuxA`, `AuxB`) drive label moves of the second-class couplings. They are
//! read lazily: an auxiliary event is observed only while its edge holds two
//! discrepancies and a label.
//!
//! A segment window emulates the infinite lattice. Sites outside the window
//! are frozen, and a pair of contamination fronts tracks which sites could
//! differ from the infinite-lattice process. Labels, meters and probes must
//! stay clear of the fronts; otherwise the run stops with a window error.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::gauss::{asep_charspeed, asep_flux, AsepParams};
use crate::harness::{fit_slope, run_replicas, Accumulator, Measured, SeedPolicy, SlopeFit};
use crate::iid::floor_robust;
use crate::real::Real;
use crate::rng::{self, tag};

/// Which per-edge stream an event belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stream {
    Main,
    AuxA,
    AuxB,
}

/// The cell of the unit mark interval an event falls in.
///
/// Main events split `[0,1)` into `Right = [0,p)` and `Left = [p,1)`.
/// Auxiliary events split it into `Drift = [0,p−q)`, `Mid = [p−q,p)` and
/// `High = [p,1)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Band {
    Right,
    Left,
    Drift,
    Mid,
    High,
}

pub fn band_of(stream: Stream, u: f64, p: f64, q: f64) -> Band {
    match stream {
        Stream::Main => {
            if u < p {
                Band::Right
            } else {
                Band::Left
            }
        }
        _ => {
            if u < p - q {
                Band::Drift
            } else if u < p {
                Band::Mid
            } else {
                Band::High
            }
        }
    }
}

/// The cells of a stream's mark partition with their widths, which are also
/// their rates since every stream has rate 1.
pub fn band_widths<R: Real>(stream: Stream, p: R, q: R) -> Vec<(Band, R)> {
    match stream {
        Stream::Main => vec![(Band::Right, p), (Band::Left, q)],
        _ => vec![(Band::Drift, p - q), (Band::Mid, q), (Band::High, q)],
    }
}

/// What one event changed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Moves {
    /// Bit `m` is set when member `m` moved a particle.
    pub members: u32,
    pub dlambda: i64,
    pub dmu: i64,
}

impl Moves {
    pub fn any(&self) -> bool {
        self.members != 0 || self.dlambda != 0 || self.dmu != 0
    }
}

/// Coupled occupation arrays with the label rules, independent of time and
/// geometry.
///
/// `members` share every clock (basic coupling). The discrepancies of the
/// designated pair, `X = members[pair.0] − members[pair.1]`, can carry two
/// labels: `lambda`, a second-class antiparticle of the upper member (it
/// yields to the other discrepancies at rate `p` and overtakes at rate `q`),
/// and `mu`, a second-class particle of the lower member (the reverse).
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Sites {
    pub members: Vec<Vec<u8>>,
    pub pair: (usize, usize),
    pub lambda: Option<usize>,
    pub mu: Option<usize>,
}

impl Sites {
    pub fn len(&self) -> usize {
        self.members.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Site `i` holds a discrepancy of the designated pair.
    #[inline]
    pub fn x(&self, i: usize) -> bool {
        self.members[self.pair.0][i] == 1 && self.members[self.pair.1][i] == 0
    }

    /// Whether an auxiliary event of `stream` on edge `(i, j)` would be read.
    #[inline]
    pub fn aux_active(&self, stream: Stream, i: usize, j: usize) -> bool {
        let on = |s: Option<usize>| s == Some(i) || s == Some(j);
        match stream {
            Stream::Main => false,
            Stream::AuxA => on(self.lambda) && self.x(i) && self.x(j),
            Stream::AuxB => on(self.mu) && self.mu != self.lambda && self.x(i) && self.x(j),
        }
    }

    /// Apply one event on edge `(i, j)`, `j` the right neighbour of `i`.
    pub fn apply(&mut self, stream: Stream, band: Band, i: usize, j: usize) -> Moves {
        let mut mv = Moves::default();
        match stream {
            Stream::Main => {
                let (from, to) = match band {
                    Band::Right => (i, j),
                    Band::Left => (j, i),
                    _ => return mv,
                };
                for (m, occ) in self.members.iter_mut().enumerate() {
                    if occ[from] == 1 && occ[to] == 0 {
                        occ[from] = 0;
                        occ[to] = 1;
                        mv.members |= 1 << m;
                    }
                }
                if mv.members != 0 && (self.lambda.is_some() || self.mu.is_some()) {
                    // A label follows its discrepancy; main clocks never swap
                    // two discrepancies, so the label does not change.
                    for s in [self.lambda, self.mu] {
                        debug_assert!(s.is_none_or(|s| self.x(s) || s == i || s == j));
                    }
                    let (xi, xj) = (self.x(i), self.x(j));
                    let follow = |s: &mut Option<usize>| {
                        if let Some(p) = *s {
                            if p == i && !xi {
                                *s = Some(j);
                            } else if p == j && !xj {
                                *s = Some(i);
                            }
                        }
                    };
                    follow(&mut self.lambda);
                    follow(&mut self.mu);
                }
            }
            Stream::AuxA => {
                if !self.aux_active(stream, i, j) {
                    return mv;
                }
                let l = self.lambda.unwrap();
                if self.mu == Some(l) {
                    // Equal labels.
                    match (l == i, band) {
                        (true, Band::Drift) => {
                            self.mu = Some(j);
                            mv.dmu = 1;
                        }
                        (true, Band::High) => {
                            self.lambda = Some(j);
                            self.mu = Some(j);
                            mv.dlambda = 1;
                            mv.dmu = 1;
                        }
                        (false, Band::Drift) => {
                            self.lambda = Some(i);
                            mv.dlambda = -1;
                        }
                        (false, Band::High) => {
                            self.lambda = Some(i);
                            self.mu = Some(i);
                            mv.dlambda = -1;
                            mv.dmu = -1;
                        }
                        _ => {}
                    }
                } else if l == j && band != Band::High {
                    self.lambda = Some(i);
                    mv.dlambda = -1;
                } else if l == i && band == Band::High {
                    self.lambda = Some(j);
                    mv.dlambda = 1;
                }
            }
            Stream::AuxB => {
                if !self.aux_active(stream, i, j) {
                    return mv;
                }
                let m = self.mu.unwrap();
                if m == i && band != Band::High {
                    self.mu = Some(j);
                    mv.dmu = 1;
                } else if m == j && band == Band::High {
                    self.mu = Some(i);
                    mv.dmu = -1;
                }
            }
        }
        mv
    }

    /// Members are non-increasing and labels sit on discrepancies.
    pub fn check(&self) -> Result<()> {
        let n = self.len();
        if self.members.iter().any(|m| m.len() != n || m.iter().any(|&v| v > 1)) {
            return Err(Error::Contract("members must be 0/1 arrays of equal length".into()));
        }
        for w in self.members.windows(2) {
            if w[0].iter().zip(&w[1]).any(|(a, b)| a < b) {
                return Err(Error::Contract("members must be coordinatewise non-increasing".into()));
            }
        }
        if self.pair.0 >= self.members.len() || self.pair.1 >= self.members.len() || self.pair.0 >= self.pair.1 {
            if self.lambda.is_some() || self.mu.is_some() {
                return Err(Error::Contract("labels need a designated pair (upper, lower)".into()));
            }
            return Ok(());
        }
        for s in [self.lambda, self.mu].into_iter().flatten() {
            if s >= n || !self.x(s) {
                return Err(Error::Contract(format!("label at index {s} is not on a discrepancy")));
            }
        }
        Ok(())
    }
}

/// Spatial domain of a run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Window {
    /// Sites `lo..=hi` of Z with a frozen exterior.
    Segment { lo: i64, hi: i64 },
    /// Sites `0..len` with edge `(len−1, 0)`.
    Ring { len: usize },
}

impl Window {
    /// `[c − L, c + L]` with `L = ⌈3t + 10√t⌉`.
    pub fn light_cone(center: i64, t: f64) -> Self {
        let l = (3.0 * t + 10.0 * t.sqrt()).ceil() as i64;
        Window::Segment { lo: center - l - 1, hi: center + l + 1 }
    }

    pub fn len(&self) -> usize {
        match *self {
            Window::Segment { lo, hi } => (hi - lo + 1).max(0) as usize,
            Window::Ring { len } => len,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_ring(&self) -> bool {
        matches!(self, Window::Ring { .. })
    }

    fn lo(&self) -> i64 {
        match *self {
            Window::Segment { lo, .. } => lo,
            Window::Ring { .. } => 0,
        }
    }

    pub fn site(&self, idx: usize) -> i64 {
        self.lo() + idx as i64
    }

    pub fn index(&self, x: i64) -> Option<usize> {
        let d = x - self.lo();
        (d >= 0 && (d as usize) < self.len()).then_some(d as usize)
    }

    pub fn edges(&self) -> usize {
        match *self {
            Window::Segment { .. } => self.len().saturating_sub(1),
            Window::Ring { len } => len,
        }
    }

    /// Storage indices of the left and right site of edge `e`.
    #[inline]
    pub fn edge_sites(&self, e: usize) -> (usize, usize) {
        match *self {
            Window::Segment { .. } => (e, e + 1),
            Window::Ring { len } => (e, (e + 1) % len),
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            Window::Segment { lo, hi } if hi - lo < 1 => domain("segment window needs at least two sites"),
            Window::Ring { len } if len < 2 => domain("ring needs at least two sites"),
            _ => Ok(()),
        }
    }
}

/// An exclusion configuration on a window.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AsepState {
    pub window: Window,
    pub occ: Vec<u8>,
}

impl AsepState {
    pub fn new(window: Window, occ: Vec<u8>) -> Result<Self> {
        window.validate()?;
        if occ.len() != window.len() || occ.iter().any(|&v| v > 1) {
            return Err(Error::Contract("occupation must be a 0/1 array covering the window".into()));
        }
        Ok(AsepState { window, occ })
    }

    pub fn empty(window: Window) -> Result<Self> {
        Self::new(window, vec![0; window.len()])
    }

    /// Occupied sites listed by lattice coordinate.
    pub fn from_sites(window: Window, sites: &[i64]) -> Result<Self> {
        let mut s = Self::empty(window)?;
        for &x in sites {
            let i = window.index(x).ok_or_else(|| Error::Contract(format!("site {x} outside the window")))?;
            s.occ[i] = 1;
        }
        Ok(s)
    }

    /// Product Bernoulli(`rho`) occupations, keyed by site.
    pub fn bernoulli(window: Window, rho: f64, seed: u64) -> Result<Self> {
        let mut v = coupled_bernoulli(window, &[rho], seed)?;
        Ok(v.pop().unwrap())
    }

    pub fn get(&self, x: i64) -> Option<u8> {
        self.window.index(x).map(|i| self.occ[i])
    }

    pub fn set(&mut self, x: i64, v: u8) -> Result<()> {
        let i = self.window.index(x).ok_or_else(|| Error::Contract(format!("site {x} outside the window")))?;
        self.occ[i] = v;
        Ok(())
    }

    pub fn count(&self) -> usize {
        self.occ.iter().map(|&v| v as usize).sum()
    }

    /// Lattice coordinates of the occupied sites.
    pub fn particles(&self) -> Vec<i64> {
        (0..self.occ.len()).filter(|&i| self.occ[i] == 1).map(|i| self.window.site(i)).collect()
    }
}

/// The uniform attached to site `x` by the initial-state stream.
pub fn site_uniform(seed: u64, x: i64) -> f64 {
    rng::unit(rng::word(rng::key(seed, &[tag::INIT]), rng::site_tag(x)))
}

/// Monotonically coupled Bernoulli configurations, one per density: site `x`
/// is occupied in member `m` iff `U_x < densities[m]`.
pub fn coupled_bernoulli(window: Window, densities: &[f64], seed: u64) -> Result<Vec<AsepState>> {
    window.validate()?;
    if densities.iter().any(|r| !(0.0..=1.0).contains(r)) {
        return domain("densities must lie in [0,1]");
    }
    let k = rng::key(seed, &[tag::INIT]);
    let u: Vec<f64> = (0..window.len()).map(|i| rng::unit(rng::word(k, rng::site_tag(window.site(i))))).collect();
    Ok(densities
        .iter()
        .map(|&r| AsepState { window, occ: u.iter().map(|&x| (x < r) as u8).collect() })
        .collect())
}

/// Counter-based clocks: the `k`-th event of a stream on the edge whose left
/// site is `x` has spacing `exp1(word(key, 2k))` and mark `unit(word(key, 2k+1))`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClockField {
    pub seed: u64,
}

impl ClockField {
    pub fn stream_key(&self, stream: Stream, x: i64) -> u64 {
        let t = match stream {
            Stream::Main => tag::EDGE_MAIN,
            Stream::AuxA => tag::EDGE_AUX_A,
            Stream::AuxB => tag::EDGE_AUX_B,
        };
        rng::key(self.seed, &[t, rng::site_tag(x)])
    }

    #[inline]
    pub fn spacing(key: u64, k: u64) -> f64 {
        rng::exp1(rng::word(key, 2 * k))
    }

    #[inline]
    pub fn mark(key: u64, k: u64) -> f64 {
        rng::unit(rng::word(key, 2 * k + 1))
    }

    /// Event times of one stream in `[0, horizon]`, with marks.
    pub fn events(&self, stream: Stream, x: i64, horizon: f64) -> Vec<(f64, f64)> {
        let key = self.stream_key(stream, x);
        let mut out = Vec::new();
        let mut t = 0.0;
        for k in 0.. {
            t += Self::spacing(key, k);
            if t > horizon {
                break;
            }
            out.push((t, Self::mark(key, k)));
        }
        out
    }
}

/// One observed event, for the debugging dump.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub time: f64,
    /// Lattice coordinate of the edge's left site.
    pub edge: i64,
    pub stream: Stream,
    pub band: Band,
    pub accepted: bool,
}

/// Line-oriented text dump: `time edge stream band accepted|blocked`.
pub fn format_log(log: &[LogEntry]) -> String {
    let mut s = String::new();
    for e in log {
        let stream = match e.stream {
            Stream::Main => "main",
            Stream::AuxA => "aux-a",
            Stream::AuxB => "aux-b",
        };
        let band = format!("{:?}", e.band).to_lowercase();
        let acc = if e.accepted { "accepted" } else { "blocked" };
        s.push_str(&format!("{:.9} {} {} {} {}\n", e.time, e.edge, stream, band, acc));
    }
    s
}

/// A current meter: net current of `member` across the path from
/// `(1/2, 0)` to `(x + 1/2, t)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeterSpec {
    pub member: usize,
    pub x: i64,
    pub t: f64,
}

/// A meter's output. `martingale = flux − compensator`, where the flux is the
/// net crossing count of edge `(x, x+1)` and the compensator integrates
/// `p·1{η_x=1, η_{x+1}=0} − q·1{η_{x+1}=1, η_x=0}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeterReading {
    pub spec: MeterSpec,
    pub current: i64,
    pub flux: i64,
    pub compensator: f64,
    pub martingale: f64,
}

#[derive(Clone, Debug)]
struct Meter {
    spec: MeterSpec,
    a: usize,
    b: usize,
    edge: usize,
    offset: i64,
    flux: i64,
    comp: f64,
    rate: f64,
    last: f64,
    done: Option<MeterReading>,
}

#[derive(Clone, Copy, Debug)]
struct Pending {
    t: f64,
    edge: u32,
    stream: Stream,
}

impl PartialEq for Pending {
    fn eq(&self, o: &Self) -> bool {
        self.cmp(o) == Ordering::Equal
    }
}
impl Eq for Pending {}
impl PartialOrd for Pending {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Pending {
    // Reversed: the heap pops the earliest event, ties by (edge, stream).
    fn cmp(&self, o: &Self) -> Ordering {
        o.t.total_cmp(&self.t).then(o.edge.cmp(&self.edge)).then(o.stream.cmp(&self.stream))
    }
}

#[derive(Clone, Copy, Debug)]
struct AuxCursor {
    key: u64,
    k: u64,
    t: f64,
    pending: bool,
}

/// Basic coupling of ordered exclusion processes on one clock field, with
/// optional labels on the discrepancies of a designated pair.
#[derive(Clone, Debug)]
pub struct CoupledAsep {
    p: f64,
    q: f64,
    clocks: ClockField,
    window: Window,
    sites: Sites,
    initial: Vec<Vec<u8>>,
    labels: (i64, i64),
    time: f64,
    // Auxiliary events only; main events come from time slabs.
    heap: BinaryHeap<Pending>,
    main_key: Vec<u64>,
    main_k: Vec<u64>,
    main_next: Vec<f64>,
    slab: Vec<(f64, f64, u32)>,
    slab_pos: usize,
    slab_end: f64,
    aux: HashMap<(usize, Stream), AuxCursor>,
    // Contaminated sites are `..=front.0` and `front.1..`.
    front: (usize, usize),
    protected: Vec<(usize, usize, f64)>,
    meters: Vec<Meter>,
    next_meter: f64,
    log: Option<Vec<LogEntry>>,
    events: u64,
    order_violations: u64,
    label_path: Option<Vec<(f64, i64, i64)>>,
}

impl CoupledAsep {
    /// Couple `members` (coordinatewise non-increasing) on the clocks of `seed`.
    pub fn new(members: Vec<AsepState>, params: &AsepParams, seed: u64) -> Result<Self> {
        let window = members.first().ok_or_else(|| Error::Contract("at least one member required".into()))?.window;
        window.validate()?;
        if members.iter().any(|m| m.window != window) {
            return Err(Error::Contract("members must share one window".into()));
        }
        if members.len() > 32 {
            return Err(Error::Contract("at most 32 members".into()));
        }
        let sites = Sites {
            members: members.into_iter().map(|m| m.occ).collect(),
            pair: (0, 1),
            lambda: None,
            mu: None,
        };
        sites.check()?;
        let clocks = ClockField { seed };
        let ne = window.edges();
        let main_key: Vec<u64> = (0..ne).map(|e| clocks.stream_key(Stream::Main, window.site(e))).collect();
        let main_next: Vec<f64> = main_key.iter().map(|&k| ClockField::spacing(k, 0)).collect();
        let n = window.len();
        Ok(CoupledAsep {
            p: params.p,
            q: params.q,
            clocks,
            window,
            initial: sites.members.clone(),
            sites,
            labels: (0, 0),
            time: 0.0,
            heap: BinaryHeap::new(),
            main_key,
            main_k: vec![0; ne],
            main_next,
            slab: Vec::with_capacity(ne + ne / 4 + 16),
            slab_pos: 0,
            slab_end: 0.0,
            aux: HashMap::new(),
            front: if window.is_ring() { (usize::MAX, usize::MAX) } else { (0, n - 1) },
            protected: Vec::new(),
            meters: Vec::new(),
            next_meter: f64::INFINITY,
            log: None,
            events: 0,
            order_violations: 0,
            label_path: None,
        })
    }

    /// Put labels on discrepancies of `members[pair.0] − members[pair.1]`.
    /// `lambda` is the antiparticle label, `mu` the particle label.
    pub fn with_labels(mut self, pair: (usize, usize), lambda: Option<i64>, mu: Option<i64>) -> Result<Self> {
        if self.time > 0.0 {
            return Err(Error::Contract("labels must be set before the run starts".into()));
        }
        let idx = |x: Option<i64>| -> Result<Option<usize>> {
            x.map(|x| self.window.index(x).ok_or_else(|| Error::Contract(format!("label site {x} outside the window"))))
                .transpose()
        };
        self.sites.pair = pair;
        self.sites.lambda = idx(lambda)?;
        self.sites.mu = idx(mu)?;
        self.sites.check()?;
        if let (Some(l), Some(m)) = (self.sites.lambda, self.sites.mu) {
            if !self.window.is_ring() && l > m {
                return Err(Error::Contract("the antiparticle label must not lie right of the particle label".into()));
            }
        }
        self.check_clear()?;
        for s in [self.sites.lambda, self.sites.mu].into_iter().flatten() {
            self.arm_around(s);
        }
        Ok(self)
    }

    /// Record every observed event.
    pub fn with_log(mut self) -> Self {
        self.log = Some(Vec::new());
        self
    }

    /// Record `(time, λ label, μ label)` at every label change.
    pub fn with_label_path(mut self) -> Self {
        self.label_path = Some(vec![(0.0, 0, 0)]);
        self
    }

    /// Sites `lo..=hi` must stay exact until time `until`.
    pub fn protect(&mut self, lo: i64, hi: i64, until: f64) -> Result<()> {
        let (Some(a), Some(b)) = (self.window.index(lo), self.window.index(hi)) else {
            return Err(Error::Window(format!("probe range [{lo}, {hi}] outside the window")));
        };
        self.protected.push((a, b, until));
        self.check_clear()
    }

    /// Attach a current meter. Its sites and the initial occupations between
    /// the origin and `x` must lie in the window.
    pub fn add_meter(&mut self, spec: MeterSpec) -> Result<usize> {
        if spec.member >= self.sites.members.len() {
            return Err(Error::Contract(format!("no member {}", spec.member)));
        }
        if !(spec.t >= self.time) {
            return Err(Error::Contract("meter time lies in the past".into()));
        }
        if self.window.is_ring() {
            return Err(Error::Contract("current meters need a segment window".into()));
        }
        let (Some(a), Some(b), Some(_), Some(_)) = (
            self.window.index(spec.x),
            self.window.index(spec.x + 1),
            self.window.index(spec.x.min(0)),
            self.window.index(spec.x.max(1)),
        ) else {
            return Err(Error::Window(format!("meter at x={} does not fit the window", spec.x)));
        };
        let occ0 = &self.initial[spec.member];
        let at = |y: i64| occ0[self.window.index(y).unwrap()] as i64;
        let offset = if spec.x >= 0 { -(1..=spec.x).map(at).sum::<i64>() } else { (spec.x + 1..=0).map(at).sum::<i64>() };
        let occ = &self.sites.members[spec.member];
        let mut m = Meter {
            spec,
            a,
            b,
            edge: a,
            offset,
            flux: 0,
            comp: 0.0,
            rate: 0.0,
            last: self.time,
            done: None,
        };
        m.rate = self.p * (occ[a] == 1 && occ[b] == 0) as u8 as f64 - self.q * (occ[b] == 1 && occ[a] == 0) as u8 as f64;
        self.protected.push((a, b, spec.t));
        self.meters.push(m);
        self.next_meter = self.next_meter.min(spec.t);
        self.check_clear()?;
        Ok(self.meters.len() - 1)
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn window(&self) -> Window {
        self.window
    }

    pub fn sites(&self) -> &Sites {
        &self.sites
    }

    pub fn member(&self, m: usize) -> AsepState {
        AsepState { window: self.window, occ: self.sites.members[m].clone() }
    }

    /// Lattice position of the antiparticle label (the single discrepancy
    /// when the pair differs at one site).
    pub fn lambda(&self) -> Option<i64> {
        self.sites.lambda.map(|i| self.window.site(i))
    }

    pub fn mu(&self) -> Option<i64> {
        self.sites.mu.map(|i| self.window.site(i))
    }

    /// Label values `(λ, μ)` relative to their starting discrepancies.
    pub fn labels(&self) -> (i64, i64) {
        self.labels
    }

    pub fn label_path(&self) -> Option<&[(f64, i64, i64)]> {
        self.label_path.as_deref()
    }

    pub fn events(&self) -> u64 {
        self.events
    }

    /// Number of events after which the antiparticle label lay strictly
    /// right of the particle label.
    pub fn order_violations(&self) -> u64 {
        self.order_violations
    }

    pub fn log(&self) -> Option<&[LogEntry]> {
        self.log.as_deref()
    }

    /// Lattice range whose occupations are exact (the whole ring for rings).
    pub fn exact_range(&self) -> (i64, i64) {
        if self.window.is_ring() {
            (0, self.window.len() as i64 - 1)
        } else {
            (self.window.site(self.front.0 + 1), self.window.site(self.front.1.saturating_sub(1)))
        }
    }

    pub fn reading(&self, meter: usize) -> Option<MeterReading> {
        self.meters.get(meter).and_then(|m| m.done)
    }

    /// Advance to time `t_end`.
    pub fn run_until(&mut self, t_end: f64) -> Result<()> {
        if t_end < self.time {
            return Err(Error::Contract("cannot run backwards".into()));
        }
        loop {
            if self.slab_pos == self.slab.len() && self.slab_end <= t_end {
                self.refill();
                continue;
            }
            let main_t = self.slab.get(self.slab_pos).map_or(f64::INFINITY, |m| m.0);
            let aux = self.heap.peek().copied();
            let aux_first = aux.is_some_and(|a| a.t < main_t);
            let t = if aux_first { aux.unwrap().t } else { main_t };
            if t > t_end {
                break;
            }
            if t > self.next_meter {
                self.settle_meters(t, false);
            }
            self.time = t;
            self.events += 1;
            if aux_first {
                let a = self.heap.pop().unwrap();
                self.fire_aux(a.edge as usize, a.stream)?;
            } else {
                let (_, u, e) = self.slab[self.slab_pos];
                self.slab_pos += 1;
                self.fire_main(e as usize, u)?;
            }
        }
        self.time = t_end;
        self.settle_meters(t_end, true);
        Ok(())
    }

    /// Collect the main events of the next unit time slab, sorted by
    /// `(time, edge)`.
    fn refill(&mut self) {
        const SLAB: f64 = 1.0;
        self.slab.clear();
        self.slab_pos = 0;
        self.slab_end += SLAB;
        let end = self.slab_end;
        for e in 0..self.main_key.len() {
            let key = self.main_key[e];
            while self.main_next[e] < end {
                let k = self.main_k[e];
                self.slab.push((self.main_next[e], ClockField::mark(key, k), e as u32));
                self.main_k[e] = k + 1;
                self.main_next[e] += ClockField::spacing(key, k + 1);
            }
        }
        self.slab.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.2.cmp(&b.2)));
    }

    fn fire_main(&mut self, e: usize, u: f64) -> Result<()> {
        let band = if u < self.p { Band::Right } else { Band::Left };
        let (i, j) = self.window.edge_sites(e);
        let mv = self.sites.apply(Stream::Main, band, i, j);
        if let Some(log) = &mut self.log {
            log.push(LogEntry { time: self.time, edge: self.window.site(i), stream: Stream::Main, band, accepted: mv.any() });
        }
        if mv.members != 0 {
            debug_assert!(self.ordered_at(i) && self.ordered_at(j));
            if !self.meters.is_empty() {
                self.touch_meters(e, i, j, band, mv.members);
            }
            if self.sites.lambda.is_some() || self.sites.mu.is_some() {
                self.arm_around(i);
                self.check_labels()?;
            }
        }
        if !self.window.is_ring() {
            let mut moved = false;
            if e == self.front.0 {
                self.front.0 += 1;
                moved = true;
            }
            if j == self.front.1 {
                self.front.1 -= 1;
                moved = true;
            }
            if moved {
                self.check_clear()?;
            }
        }
        Ok(())
    }

    fn fire_aux(&mut self, e: usize, stream: Stream) -> Result<()> {
        let c = self.aux.get_mut(&(e, stream)).expect("pending auxiliary event without cursor");
        let u = ClockField::mark(c.key, c.k);
        c.k += 1;
        c.t += ClockField::spacing(c.key, c.k);
        c.pending = false;
        let (i, j) = self.window.edge_sites(e);
        if !self.sites.aux_active(stream, i, j) {
            return Ok(());
        }
        let band = band_of(stream, u, self.p, self.q);
        let mv = self.sites.apply(stream, band, i, j);
        if let Some(log) = &mut self.log {
            log.push(LogEntry { time: self.time, edge: self.window.site(i), stream, band, accepted: mv.any() });
        }
        if mv.any() {
            self.labels.0 += mv.dlambda;
            self.labels.1 += mv.dmu;
            if let Some(p) = &mut self.label_path {
                p.push((self.time, self.labels.0, self.labels.1));
            }
            self.check_labels()?;
        }
        self.arm_around(i);
        Ok(())
    }

    fn ordered_at(&self, i: usize) -> bool {
        self.sites.members.windows(2).all(|w| w[0][i] >= w[1][i])
    }

    fn check_labels(&mut self) -> Result<()> {
        if let (Some(l), Some(m)) = (self.sites.lambda, self.sites.mu) {
            if !self.window.is_ring() && l > m {
                self.order_violations += 1;
            }
        }
        self.check_clear()
    }

    /// Schedule auxiliary streams on the edges around site `i` that just
    /// became active.
    fn arm_around(&mut self, i: usize) {
        let ne = self.window.edges();
        let cand: [Option<usize>; 4] = if self.window.is_ring() {
            let n = ne;
            [Some((i + n - 2) % n), Some((i + n - 1) % n), Some(i), Some((i + 1) % n)]
        } else {
            [i.checked_sub(2), i.checked_sub(1), Some(i), Some(i + 1)]
        };
        for e in cand.into_iter().flatten() {
            if e >= ne {
                continue;
            }
            let (a, b) = self.window.edge_sites(e);
            for stream in [Stream::AuxA, Stream::AuxB] {
                if !self.sites.aux_active(stream, a, b) {
                    continue;
                }
                let now = self.time;
                let clocks = self.clocks;
                let x = self.window.site(a);
                let c = self.aux.entry((e, stream)).or_insert_with(|| {
                    let key = clocks.stream_key(stream, x);
                    AuxCursor { key, k: 0, t: ClockField::spacing(key, 0), pending: false }
                });
                if c.pending {
                    continue;
                }
                while c.t <= now {
                    c.k += 1;
                    c.t += ClockField::spacing(c.key, c.k);
                }
                c.pending = true;
                self.heap.push(Pending { t: c.t, edge: e as u32, stream });
            }
        }
    }

    fn touch_meters(&mut self, e: usize, i: usize, j: usize, band: Band, moved: u32) {
        let now = self.time;
        let (p, q) = (self.p, self.q);
        for m in &mut self.meters {
            if m.done.is_some() || moved & (1 << m.spec.member) == 0 {
                continue;
            }
            if i != m.a && i != m.b && j != m.a && j != m.b {
                continue;
            }
            m.comp += m.rate * (now - m.last);
            m.last = now;
            if e == m.edge {
                m.flux += if band == Band::Right { 1 } else { -1 };
            }
            let occ = &self.sites.members[m.spec.member];
            m.rate = p * (occ[m.a] == 1 && occ[m.b] == 0) as u8 as f64 - q * (occ[m.b] == 1 && occ[m.a] == 0) as u8 as f64;
        }
    }

    fn settle_meters(&mut self, t: f64, inclusive: bool) {
        let mut next = f64::INFINITY;
        for m in &mut self.meters {
            if m.done.is_some() {
                continue;
            }
            if m.spec.t < t || (inclusive && m.spec.t <= t) {
                let comp = m.comp + m.rate * (m.spec.t - m.last);
                m.done = Some(MeterReading {
                    spec: m.spec,
                    current: m.flux + m.offset,
                    flux: m.flux,
                    compensator: comp,
                    martingale: m.flux as f64 - comp,
                });
            } else {
                next = next.min(m.spec.t);
            }
        }
        self.next_meter = next;
    }

    fn check_clear(&self) -> Result<()> {
        if self.window.is_ring() {
            return Ok(());
        }
        let (cl, cr) = self.front;
        for s in [self.sites.lambda, self.sites.mu].into_iter().flatten() {
            if s <= cl + 1 || s + 1 >= cr {
                return Err(Error::Window(format!(
                    "label at site {} reached the boundary-influenced zone at t={:.3}",
                    self.window.site(s),
                    self.time
                )));
            }
        }
        for &(a, b, until) in &self.protected {
            if until >= self.time && (a <= cl || b >= cr) {
                return Err(Error::Window(format!(
                    "sites [{}, {}] reached the boundary-influenced zone at t={:.3}",
                    self.window.site(a),
                    self.window.site(b),
                    self.time
                )));
            }
        }
        Ok(())
    }
}

/// Initial law for [`asep_run`].
#[derive(Clone, Debug, PartialEq)]
pub enum Initial {
    State(AsepState),
    Bernoulli { rho: f64 },
}

/// Result of [`asep_run`].
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub state: AsepState,
    pub events: u64,
    pub exact_range: (i64, i64),
    pub log: Option<Vec<LogEntry>>,
}

/// Run a single exclusion process to time `horizon`.
pub fn asep_run(
    initial: &Initial,
    params: &AsepParams,
    horizon: f64,
    window: Window,
    seed: u64,
    log: bool,
) -> Result<Trajectory> {
    let state = match initial {
        Initial::State(s) => {
            if s.window != window {
                return Err(Error::Contract("initial state and window disagree".into()));
            }
            s.clone()
        }
        Initial::Bernoulli { rho } => AsepState::bernoulli(window, *rho, seed)?,
    };
    let mut c = CoupledAsep::new(vec![state], params, seed)?;
    if log {
        c = c.with_log();
    }
    c.run_until(horizon)?;
    Ok(Trajectory { state: c.member(0), events: c.events, exact_range: c.exact_range(), log: c.log.take() })
}

/// Basic coupling of ordered members run to `horizon`. When the first two
/// members differ at a single site, that discrepancy is tracked as `Q`
/// (available through [`CoupledAsep::lambda`]).
pub fn couple_basic(members: Vec<AsepState>, params: &AsepParams, horizon: f64, seed: u64) -> Result<CoupledAsep> {
    let q = single_discrepancy(&members);
    let mut c = CoupledAsep::new(members, params, seed)?;
    if let Some(x) = q {
        c = c.with_labels((0, 1), Some(x), None)?;
    }
    c.run_until(horizon)?;
    Ok(c)
}

fn single_discrepancy(members: &[AsepState]) -> Option<i64> {
    if members.len() < 2 {
        return None;
    }
    let d: Vec<usize> = (0..members[0].occ.len()).filter(|&i| members[0].occ[i] != members[1].occ[i]).collect();
    (d.len() == 1).then(|| members[0].window.site(d[0]))
}

/// Label-walk setup: `ω ≥ η` coupled Bernoulli with
/// densities `rho > lambda` off the origin, `ω_0 = 1`, `η_0 = 0`, and the
/// single `ω − ω⁻` discrepancy `Q` at the origin.
pub fn label_walk_setup(window: Window, rho: f64, lambda: f64, seed: u64) -> Result<Vec<AsepState>> {
    if !(lambda < rho) {
        return domain("label walk needs lambda < rho");
    }
    let mut v = coupled_bernoulli(window, &[rho, lambda], seed)?;
    v[0].set(0, 1)?;
    v[1].set(0, 0)?;
    Ok(v)
}

/// Run the `(η, ω)` pair with the class II / class III exchanges on the
/// auxiliary clocks, and return the engine. `labels().0` is `Qlb`.
pub fn label_walk_q(members: Vec<AsepState>, params: &AsepParams, horizon: f64, seed: u64) -> Result<CoupledAsep> {
    if !(params.p > params.q) {
        return domain("the label walk needs p > q");
    }
    if members.len() != 2 {
        return Err(Error::Contract("label walk takes the pair (omega, eta)".into()));
    }
    let mut c = CoupledAsep::new(members, params, seed)?.with_labels((0, 1), Some(0), None)?.with_label_path();
    c.run_until(horizon)?;
    Ok(c)
}

/// Build the microscopic-concavity coupling of `ζ ≥ ξ` with labels
/// `Q^ζ ≤ Q^ξ` on `ζ − ξ` discrepancies. The engine is returned unrun.
pub fn couple_concavity(
    zeta: AsepState,
    xi: AsepState,
    q_zeta: i64,
    q_xi: i64,
    params: &AsepParams,
    seed: u64,
) -> Result<CoupledAsep> {
    if q_zeta > q_xi {
        return Err(Error::Contract("Q^zeta must not exceed Q^xi".into()));
    }
    CoupledAsep::new(vec![zeta, xi], params, seed)?.with_labels((0, 1), Some(q_zeta), Some(q_xi))
}

/// Identity-suite request.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentityConfig {
    pub t: f64,
    /// Observer site; `⌊V^ρ t⌋` when absent.
    pub z: Option<i64>,
    /// Sites `j` for the sitewise covariance identity.
    pub sites: Vec<i64>,
    pub replicas: u64,
    pub seed: u64,
    /// Half-width of the truncated covariance sum around `z`.
    pub goal1_radius: Option<i64>,
}

/// A sitewise covariance comparison.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SiteCov {
    pub j: i64,
    /// `Cov[η_j(t), η_0(0)]`.
    pub cov: Measured,
    /// `ρ(1−ρ) P(Q(t) = j)`.
    pub scaled_prob: Measured,
    /// Paired difference of the two.
    pub diff: Measured,
}

/// Joint estimates of the second-class identities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentityReport {
    pub params: AsepParams,
    pub t: f64,
    pub z: i64,
    pub replicas: u64,
    pub seed: u64,
    pub mean_current: Measured,
    pub expected_current: f64,
    /// Sample variance of `J_z(t)`.
    pub var_current: Measured,
    /// `ρ(1−ρ) E|Q(t) − z|`.
    pub scaled_abs_q: Measured,
    /// Mean of `(J − EJ)² − ρ(1−ρ)|Q − z|`, which vanishes by the identity.
    pub var_minus_q: Measured,
    /// `E Q(t) / t`.
    pub speed: Measured,
    pub char_speed: f64,
    /// Mean of the martingale `M(t)` at the origin edge.
    pub martingale: Measured,
    pub sites: Vec<SiteCov>,
    /// `Σ_{|j−z|≤R} |j−z| Cov[η_j(t), η_0(0)]`.
    pub goal1_truncated: Measured,
    /// The two outermost terms of that sum.
    pub goal1_edge: Measured,
    pub goal1_radius: i64,
}

/// One replica of the `Pv^ρ` setup: the `(η⁺, η)` pair with `Q(0)=0` plus the
/// stationary process `ω`, which equals `η⁺` when `U_0 < ρ` and `η` otherwise.
fn identity_replica(params: &AsepParams, cfg: &IdentityConfig, z: i64, radius: i64, seed: u64) -> Result<Vec<f64>> {
    let rho = params.rho;
    let t = cfg.t;
    let lo_probe = cfg.sites.iter().copied().min().unwrap_or(0).min(z - radius);
    let hi_probe = cfg.sites.iter().copied().max().unwrap_or(0).max(z + radius);
    let span = (3.0 * t + 10.0 * t.sqrt()).ceil() as i64 + 2;
    let window = Window::Segment { lo: lo_probe.min(0) - span, hi: hi_probe.max(0) + span };
    let mut pair = coupled_bernoulli(window, &[rho, rho], seed)?;
    pair[0].set(0, 1)?;
    pair[1].set(0, 0)?;
    let stat = if site_uniform(seed, 0) < rho { 0 } else { 1 };
    let mut c = CoupledAsep::new(pair, params, seed)?.with_labels((0, 1), Some(0), None)?;
    let mj = c.add_meter(MeterSpec { member: stat, x: z, t })?;
    let mm = c.add_meter(MeterSpec { member: stat, x: 0, t })?;
    c.protect(lo_probe, hi_probe, t)?;
    c.run_until(t)?;
    let j = c.reading(mj).unwrap().current as f64;
    let m = c.reading(mm).unwrap().martingale;
    let qpos = c.lambda().unwrap();
    let ej = t * asep_flux(params) - z as f64 * rho;
    let h = rho * (1.0 - rho);
    let b = if stat == 0 { 1.0 } else { 0.0 } - rho;
    let occ = |x: i64| c.sites.members[stat][c.window.index(x).unwrap()] as f64;
    let mut out = vec![
        j,
        (j - ej) * (j - ej),
        (qpos - z).abs() as f64,
        (j - ej) * (j - ej) - h * (qpos - z).abs() as f64,
        qpos as f64,
        m,
    ];
    for &s in &cfg.sites {
        let cv = (occ(s) - rho) * b;
        let ind = (qpos == s) as u8 as f64;
        out.extend([cv, ind, cv - h * ind]);
    }
    let mut g = 0.0;
    for s in z - radius..=z + radius {
        g += (s - z).abs() as f64 * (occ(s) - rho) * b;
    }
    let edge = radius as f64 * ((occ(z - radius) - rho) + (occ(z + radius) - rho)) * b;
    out.extend([g, edge]);
    Ok(out)
}

/// Estimate the second-class identities under the stationary Bernoulli law.
pub fn identity_suite(params: &AsepParams, cfg: &IdentityConfig) -> Result<IdentityReport> {
    if !(params.rho > 0.0 && params.rho < 1.0) {
        return domain("identity suite needs 0 < rho < 1");
    }
    if !(cfg.t > 0.0) || cfg.replicas < 2 {
        return domain("identity suite needs t > 0 and at least two replicas");
    }
    let v = asep_charspeed(params);
    let z = cfg.z.unwrap_or_else(|| floor_robust(v * cfg.t));
    let radius = cfg.goal1_radius.unwrap_or_else(|| (4.0 * cfg.t.powf(2.0 / 3.0)).ceil() as i64 + 8);
    let mut names: Vec<String> = ["J", "J2", "absQ", "d", "Q", "M"].iter().map(|s| s.to_string()).collect();
    for s in &cfg.sites {
        names.extend([format!("cov{s}"), format!("pq{s}"), format!("dc{s}")]);
    }
    names.extend(["goal1".to_string(), "goal1_edge".to_string()]);
    let ej = cfg.t * asep_flux(params) - z as f64 * params.rho;
    let template = Accumulator::new(names).centered("J", ej);
    let acc = run_replicas(&template, cfg.replicas, SeedPolicy::new(cfg.seed), |s| {
        identity_replica(params, cfg, z, radius, s)
    })?;
    let est = acc.estimate()?;
    let h = params.rho * (1.0 - params.rho);
    let scale = |m: Measured, c: f64| Measured { value: m.value * c, se: m.se * c.abs() };
    let sites = cfg
        .sites
        .iter()
        .map(|s| SiteCov {
            j: *s,
            cov: est.mean_of(&format!("cov{s}")),
            scaled_prob: scale(est.mean_of(&format!("pq{s}")), h),
            diff: est.mean_of(&format!("dc{s}")),
        })
        .collect();
    Ok(IdentityReport {
        params: *params,
        t: cfg.t,
        z,
        replicas: cfg.replicas,
        seed: cfg.seed,
        mean_current: est.mean_of("J"),
        expected_current: ej,
        var_current: est.var_of("J"),
        scaled_abs_q: scale(est.mean_of("absQ"), h),
        var_minus_q: est.mean_of("d"),
        speed: scale(est.mean_of("Q"), 1.0 / cfg.t),
        char_speed: v,
        martingale: est.mean_of("M"),
        sites,
        goal1_truncated: est.mean_of("goal1"),
        goal1_edge: est.mean_of("goal1_edge"),
        goal1_radius: radius,
    })
}

/// Observer for the current-variance series.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Observer {
    /// `x = ⌊V^ρ t⌋`.
    Characteristic,
    /// `x = ⌊v t⌋`.
    Speed { v: f64 },
}

impl Observer {
    pub fn site(&self, params: &AsepParams, t: f64) -> i64 {
        match *self {
            Observer::Characteristic => floor_robust(asep_charspeed(params) * t),
            Observer::Speed { v } => floor_robust(v * t),
        }
    }
}

/// One point of a variance series.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesPoint {
    pub t: f64,
    pub x: i64,
    pub mean: Measured,
    pub var: Measured,
    pub replicas: u64,
    pub seconds: f64,
}

/// `Var J_x(t)` of the stationary process at each time, from independent
/// replicas. Times get distinct seed streams.
pub fn current_variance_series(
    params: &AsepParams,
    observer: Observer,
    times: &[f64],
    replicas: u64,
    seed: u64,
) -> Result<Vec<SeriesPoint>> {
    if !(params.rho > 0.0 && params.rho < 1.0) {
        return domain("variance series needs 0 < rho < 1");
    }
    let mut out = Vec::with_capacity(times.len());
    for (k, &t) in times.iter().enumerate() {
        let start = std::time::Instant::now();
        let x = observer.site(params, t);
        let ej = t * asep_flux(params) - x as f64 * params.rho;
        let template = Accumulator::new(["J"]).centered("J", ej);
        let policy = SeedPolicy::new(rng::key(seed, &[k as u64]));
        let acc = run_replicas(&template, replicas, policy, |s| {
            let window = Window::light_cone(x / 2, t + (x.abs() as f64) / 2.0);
            let state = AsepState::bernoulli(window, params.rho, s)?;
            let mut c = CoupledAsep::new(vec![state], params, s)?;
            let m = c.add_meter(MeterSpec { member: 0, x, t })?;
            c.run_until(t)?;
            Ok(vec![c.reading(m).unwrap().current as f64])
        })?;
        let est = acc.estimate()?;
        out.push(SeriesPoint {
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

/// Log-log slope of a variance series.
pub fn variance_slope(series: &[SeriesPoint], seed: u64) -> Result<SlopeFit> {
    let pts: Vec<(f64, f64, f64)> = series.iter().map(|p| (p.t, p.var.value, p.var.se)).collect();
    fit_slope(&pts, seed)
}

/// Empirical tail of the label `Qlb(t)` against `e^{−2θk}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailPoint {
    pub k: i64,
    pub prob: Measured,
    pub bound: f64,
}

/// `P(Qlb(t) ≥ k)` for `k = 1..=kmax` in the label-walk setup.
pub fn label_tail(
    params: &AsepParams,
    lambda: f64,
    t: f64,
    kmax: i64,
    replicas: u64,
    seed: u64,
) -> Result<Vec<TailPoint>> {
    if !(params.p > params.q) {
        return domain("the label walk needs p > q");
    }
    let names: Vec<String> = (1..=kmax).map(|k| format!("ge{k}")).collect();
    let template = Accumulator::new(names);
    let acc = run_replicas(&template, replicas, SeedPolicy::new(seed), |s| {
        let window = Window::light_cone(0, t);
        let members = label_walk_setup(window, params.rho, lambda, s)?;
        let c = label_walk_q(members, params, t, s)?;
        let l = c.labels().0;
        Ok((1..=kmax).map(|k| (l >= k) as u8 as f64).collect())
    })?;
    let est = acc.estimate()?;
    let theta = params.bias();
    Ok((1..=kmax)
        .map(|k| TailPoint { k, prob: est.mean_of(&format!("ge{k}")), bound: (-2.0 * theta * k as f64).exp() })
        .collect())
}

/// A fixed on/off environment for the barrier walk. `open(x, t)` is the
/// state of edge `{x−1, x}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EdgeEnv {
    Open,
    /// Edge `{0, 1}` permanently closed: the walk is reflected at 0.
    Reflect,
    /// Edge `{x−1, x}` open iff `⌊t/period⌋ + x` is even.
    Alternating { period: f64 },
    /// Each edge flips at the events of its own rate-`rate` Poisson stream,
    /// starting open.
    Telegraph { rate: f64, seed: u64 },
}

impl EdgeEnv {
    pub fn open(&self, x: i64, t: f64) -> bool {
        match *self {
            EdgeEnv::Open => true,
            EdgeEnv::Reflect => x != 1,
            EdgeEnv::Alternating { period } => ((t / period).floor() as i64 + x).rem_euclid(2) == 0,
            EdgeEnv::Telegraph { rate, seed } => {
                let key = rng::key(seed, &[tag::ENV, rng::site_tag(x)]);
                let mut s = 0.0;
                let mut open = true;
                for k in 0.. {
                    s += rng::exp1(rng::word(key, k)) / rate;
                    if s > t {
                        break;
                    }
                    open = !open;
                }
                open
            }
        }
    }
}

/// Nearest-neighbour walk from 0: up at rate `p`, down at rate `1−p`, each
/// jump allowed only across an open edge. Returns `Z(t)`.
pub fn barrier_walk(env: &EdgeEnv, p: f64, t: f64, seed: u64) -> i64 {
    let key = rng::key(seed, &[tag::WALK]);
    let mut z = 0i64;
    let mut s = 0.0;
    for k in 0.. {
        s += ClockField::spacing(key, k);
        if s > t {
            break;
        }
        if ClockField::mark(key, k) < p {
            if env.open(z + 1, s) {
                z += 1;
            }
        } else if env.open(z, s) {
            z -= 1;
        }
    }
    z
}

/// `P(Z(t) ≤ −k)` for `k = 1..=kmax` against `e^{−2θk}`.
pub fn barrier_walk_tail(env: &EdgeEnv, p: f64, t: f64, kmax: i64, replicas: u64, seed: u64) -> Result<Vec<TailPoint>> {
    if !(p > 0.5 && p <= 1.0) {
        return domain("barrier walk needs 1/2 < p <= 1");
    }
    let names: Vec<String> = (1..=kmax).map(|k| format!("le{k}")).collect();
    let acc = run_replicas(&Accumulator::new(names), replicas, SeedPolicy::new(seed), |s| {
        let z = barrier_walk(env, p, t, s);
        Ok((1..=kmax).map(|k| (z <= -k) as u8 as f64).collect())
    })?;
    let est = acc.estimate()?;
    let theta = 2.0 * p - 1.0;
    Ok((1..=kmax)
        .map(|k| TailPoint { k, prob: est.mean_of(&format!("le{k}")), bound: (-2.0 * theta * k as f64).exp() })
        .collect())
}

//! JSON-configured experiments and their CSV rows.
//!
//! A config names one model and a list of observables. Each subcommand
//! ([`Command`]) runs the observables it understands and emits one
//! [`ResultRow`] per (observable, point). Pair observables are named
//! `cov_i_j`, with `i`, `j` indexing the observable's point list; the row
//! carries point `i`.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::asep::{self, AsepState, CoupledAsep, Initial, MeterSpec, Observer, Window};
use crate::error::{Error, Result};
use crate::gauss::{self, AsepParams, ModelMoments, SpaceTimePoint};
use crate::harness::{run_replicas, Accumulator, Measured, SeedPolicy};
use crate::iid::{self, floor_robust, CurrentSim, InitialLaw, JumpKernel, LatticeWindow};
use crate::oracle::{self, FiniteModel, Generator, Lattice};
use crate::rap::{self, IncrementLaw, WeightKind, WeightLaw};
use crate::real::exact;
use crate::rng;
use crate::rwre::{self, EnvKind, EnvLaw, Environment};
use crate::zrp::{self, RateFamily, RateFn, ZrpCoupled, ZrpMeterSpec, ZrpWindow};

/// Header of every CSV this module writes.
pub const CSV_HEADER: &str = "experiment,observable,t,x,estimate,stderr,replicas,seed,seconds";

/// Environment variable naming a directory for output files.
pub const OUT_DIR_ENV: &str = "CURRENTLAB_OUT_DIR";

const RWRE_TOL: f64 = 1e-12;
const RWRE_SIGMA_SITES: i64 = 1_000_000;
const RAP_RADIUS: usize = 100;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Experiment id written in every row; the model kind when absent.
    #[serde(default)]
    pub name: Option<String>,
    pub model: ModelSpec,
    #[serde(default)]
    pub observables: Vec<ObservableSpec>,
    pub replicas: u64,
    pub seed: u64,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ModelSpec {
    /// Independent walks. `kernel` lists `[step, probability]` pairs.
    Iid { kernel: Vec<(i64, f64)>, initial: InitialLaw, n: u64 },
    /// Walks in a random environment with Poisson(μ f) occupations.
    Rwre {
        environment: EnvKind,
        #[serde(default = "default_eps")]
        eps: f64,
        mu: f64,
        n: u64,
    },
    Rap { weights: WeightKind, increments: IncrementLaw, n: u64 },
    /// `q` defaults to `1 − p`. `p = q = 1/2` selects the symmetric control.
    Asep {
        p: f64,
        #[serde(default)]
        q: Option<f64>,
        rho: f64,
    },
    /// `r` is an optional declared bound on the concavity ratio.
    Zrp {
        rate: RateFamily,
        #[serde(default)]
        r: Option<f64>,
        rho: f64,
    },
}

fn default_eps() -> f64 {
    0.5
}

impl ModelSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            ModelSpec::Iid { .. } => "iid",
            ModelSpec::Rwre { .. } => "rwre",
            ModelSpec::Rap { .. } => "rap",
            ModelSpec::Asep { .. } => "asep",
            ModelSpec::Zrp { .. } => "zrp",
        }
    }

    fn interacting(&self) -> bool {
        matches!(self, ModelSpec::Asep { .. } | ModelSpec::Zrp { .. })
    }
}

/// An observation point. For walk models `x` is the scaled offset `r`; for
/// exclusion and zero-range it is a lattice site.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointSpec {
    pub t: f64,
    pub x: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ObservableSpec {
    /// Raw current moments at each point.
    Current { points: Vec<PointSpec> },
    /// Covariance grid of the scaled current against its limit.
    Covariance { points: Vec<PointSpec> },
    /// Second-class-particle identities at time `t`.
    Identity {
        t: f64,
        #[serde(default)]
        z: Option<i64>,
        #[serde(default)]
        sites: Vec<i64>,
    },
    /// `Var J` along an observer ray, plus a log-log slope.
    Scaling {
        times: Vec<f64>,
        #[serde(default)]
        observer: Option<Observer>,
    },
    /// Label tails in the label-walk setup with lower density `lambda`.
    LabelTails { t: f64, kmax: i64, lambda: f64 },
}

impl ObservableSpec {
    fn kind(&self) -> &'static str {
        match self {
            ObservableSpec::Current { .. } => "current",
            ObservableSpec::Covariance { .. } => "covariance",
            ObservableSpec::Identity { .. } => "identity",
            ObservableSpec::Scaling { .. } => "scaling",
            ObservableSpec::LabelTails { .. } => "label-tails",
        }
    }
}

/// Subcommands of the runner.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Analytic,
    Simulate,
    Identity,
    Scaling,
    Oracle,
    Covariance,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Analytic => "analytic",
            Command::Simulate => "simulate",
            Command::Identity => "identity",
            Command::Scaling => "scaling",
            Command::Oracle => "oracle",
            Command::Covariance => "covariance",
        }
    }

    fn accepts(&self, o: &ObservableSpec) -> bool {
        match self {
            Command::Analytic => matches!(o, ObservableSpec::Current { .. } | ObservableSpec::Covariance { .. }),
            Command::Simulate => matches!(o, ObservableSpec::Current { .. } | ObservableSpec::LabelTails { .. }),
            Command::Identity => matches!(o, ObservableSpec::Identity { .. }),
            Command::Scaling => matches!(o, ObservableSpec::Scaling { .. }),
            Command::Covariance => matches!(o, ObservableSpec::Covariance { .. }),
            Command::Oracle => false,
        }
    }
}

/// One CSV line. Analytic and exact rows carry zero replicas and stderr.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub experiment: String,
    pub observable: String,
    pub t: Option<f64>,
    pub x: Option<f64>,
    pub estimate: f64,
    pub stderr: f64,
    pub replicas: u64,
    pub seed: u64,
    pub seconds: f64,
}

/// A validated model.
#[derive(Clone, Debug)]
pub enum Model {
    Iid { kernel: JumpKernel, initial: InitialLaw, n: u64 },
    Rwre { law: EnvLaw, mu: f64, n: u64 },
    Rap { law: WeightLaw, inc: IncrementLaw, n: u64 },
    Asep { params: AsepParams },
    Zrp { g: RateFn, rho: f64 },
}

fn build(spec: &ModelSpec) -> Result<Model> {
    Ok(match spec {
        ModelSpec::Iid { kernel, initial, n } => {
            initial.validate()?;
            Model::Iid { kernel: JumpKernel::new(kernel)?, initial: initial.clone(), n: *n }
        }
        ModelSpec::Rwre { environment, eps, mu, n } => {
            Model::Rwre { law: EnvLaw::new(environment.clone(), *eps)?, mu: *mu, n: *n }
        }
        ModelSpec::Rap { weights, increments, n } => {
            increments.validate()?;
            Model::Rap { law: WeightLaw::new(weights.clone())?, inc: increments.clone(), n: *n }
        }
        ModelSpec::Asep { p, q, rho } => {
            let q = q.unwrap_or(1.0 - p);
            let params = if *p == q { AsepParams::symmetric(*rho)? } else { AsepParams::new(*p, q, *rho)? };
            Model::Asep { params }
        }
        ModelSpec::Zrp { rate, r, rho } => {
            let g = RateFn::new(rate.clone(), *r)?;
            zrp::invariant_measure(&g, *rho)?;
            Model::Zrp { g, rho: *rho }
        }
    })
}

/// Parse a config from inline JSON (text starting with `{`) or a file path,
/// then validate it.
pub fn parse_config(src: &str) -> Result<ExperimentConfig> {
    let cfg = load_config(src)?;
    validate(&cfg)?;
    Ok(cfg)
}

/// Schema-only parse, for callers that override fields before validating.
pub fn load_config(src: &str) -> Result<ExperimentConfig> {
    let text = if src.trim_start().starts_with('{') {
        src.to_string()
    } else {
        std::fs::read_to_string(src).map_err(|e| Error::Config(format!("cannot read {src}: {e}")))?
    };
    serde_json::from_str(&text).map_err(|e| Error::Config(e.to_string()))
}

fn check_point(p: &PointSpec, at: &str, interacting: bool, range: &mut Vec<String>) {
    if !(p.t > 0.0 && p.t.is_finite()) {
        range.push(format!("{at}: t must be positive and finite, got {}", p.t));
    }
    if !p.x.is_finite() {
        range.push(format!("{at}: x must be finite"));
    } else if interacting && p.x.fract() != 0.0 {
        range.push(format!("{at}: x must be an integer site, got {}", p.x));
    }
}

/// All schema and range violations at once. Usage problems (wrong observable
/// for the model) give a config error, parameter ranges a domain error.
pub fn validate(cfg: &ExperimentConfig) -> Result<Model> {
    let mut usage = Vec::new();
    let mut range = Vec::new();
    if cfg.replicas < 2 {
        range.push(format!("replicas: need at least 2, got {}", cfg.replicas));
    }
    match &cfg.model {
        ModelSpec::Asep { p, q, rho } => {
            let q = q.unwrap_or(1.0 - p);
            if !((p + q - 1.0).abs() <= 1e-12) {
                range.push(format!("model: rates must satisfy p+q=1, got p={p}, q={q}"));
            }
            if !(p >= &q) {
                range.push(format!("model: need p >= q, got p={p}, q={q}"));
            }
            if !(0.0..=1.0).contains(rho) {
                range.push(format!("model: density must satisfy 0 <= rho <= 1, got {rho}"));
            }
        }
        ModelSpec::Zrp { rho, .. } if !(*rho > 0.0 && rho.is_finite()) => {
            range.push(format!("model: zero-range density must satisfy rho > 0, got {rho}"));
        }
        ModelSpec::Iid { n, .. } | ModelSpec::Rwre { n, .. } | ModelSpec::Rap { n, .. } if *n == 0 => {
            range.push("model: scaling parameter n must be >= 1".into());
        }
        ModelSpec::Rwre { mu, .. } if !(*mu >= 0.0 && mu.is_finite()) => {
            range.push(format!("model: occupation mean mu must be >= 0, got {mu}"));
        }
        _ => {}
    }
    let interacting = cfg.model.interacting();
    for (i, o) in cfg.observables.iter().enumerate() {
        let at = format!("observables[{i}]");
        let allowed = match o {
            ObservableSpec::Current { .. } => true,
            ObservableSpec::Covariance { .. } => !interacting,
            _ => interacting,
        };
        if !allowed {
            usage.push(format!("{at}: `{}` is not available for {} models", o.kind(), cfg.model.kind()));
        }
        match o {
            ObservableSpec::Current { points } | ObservableSpec::Covariance { points } => {
                if points.is_empty() {
                    usage.push(format!("{at}: needs at least one point"));
                }
                for (j, p) in points.iter().enumerate() {
                    check_point(p, &format!("{at}.points[{j}]"), interacting, &mut range);
                }
            }
            ObservableSpec::Identity { t, .. } => {
                if !(*t > 0.0 && t.is_finite()) {
                    range.push(format!("{at}: t must be positive and finite, got {t}"));
                }
            }
            ObservableSpec::Scaling { times, observer } => {
                if times.len() < 3 {
                    usage.push(format!("{at}: a slope fit needs at least 3 times"));
                }
                if times.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
                    range.push(format!("{at}: times must be positive and finite"));
                }
                if matches!(observer, Some(Observer::Speed { .. })) && matches!(cfg.model, ModelSpec::Zrp { .. }) {
                    usage.push(format!("{at}: zero-range series follow the characteristic only"));
                }
            }
            ObservableSpec::LabelTails { t, kmax, lambda } => {
                if !(*t > 0.0 && t.is_finite()) {
                    range.push(format!("{at}: t must be positive and finite, got {t}"));
                }
                if *kmax < 1 {
                    range.push(format!("{at}: kmax must be >= 1"));
                }
                let rho = match cfg.model {
                    ModelSpec::Asep { rho, .. } | ModelSpec::Zrp { rho, .. } => rho,
                    _ => f64::INFINITY,
                };
                if !(*lambda > 0.0 && *lambda < rho) {
                    range.push(format!("{at}: need 0 < lambda < rho, got lambda={lambda}"));
                }
            }
        }
    }
    let model = if range.is_empty() {
        match build(&cfg.model) {
            Ok(m) => Some(m),
            Err(e) => {
                range.push(format!("model: {}", e.message()));
                None
            }
        }
    } else {
        None
    };
    if !usage.is_empty() {
        usage.extend(range);
        return Err(Error::Config(usage.join("; ")));
    }
    if !range.is_empty() {
        return Err(Error::Domain(range.join("; ")));
    }
    Ok(model.expect("built when there are no violations"))
}

/// Row builder with the experiment-wide columns filled in.
struct Rows {
    experiment: String,
    replicas: u64,
    seed: u64,
    rows: Vec<ResultRow>,
}

impl Rows {
    fn new(experiment: &str, replicas: u64, seed: u64) -> Self {
        Rows { experiment: experiment.to_string(), replicas, seed, rows: Vec::new() }
    }

    fn push(&mut self, observable: &str, t: Option<f64>, x: Option<f64>, m: Measured, replicas: u64, seconds: f64) {
        self.rows.push(ResultRow {
            experiment: self.experiment.clone(),
            observable: observable.to_string(),
            t,
            x,
            estimate: m.value,
            stderr: m.se,
            replicas,
            seed: self.seed,
            seconds,
        });
    }

    fn measured(&mut self, observable: &str, t: f64, x: f64, m: Measured, seconds: f64) {
        self.push(observable, Some(t), Some(x), m, self.replicas, seconds);
    }

    fn exact(&mut self, observable: &str, t: Option<f64>, x: Option<f64>, value: f64, seconds: f64) {
        self.push(observable, t, x, Measured { value, se: 0.0 }, 0, seconds);
    }
}

fn points(p: &[PointSpec]) -> Vec<SpaceTimePoint> {
    p.iter().map(|p| SpaceTimePoint::new(p.t, p.x)).collect()
}

fn names(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i}")).collect()
}

fn secs(start: Instant) -> f64 {
    start.elapsed().as_secs_f64()
}

/// Run the observables of `cfg` that `cmd` handles.
pub fn run(cmd: Command, cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    if cmd == Command::Oracle {
        return run_oracle(cfg.seed, cfg.replicas);
    }
    let model = validate(cfg)?;
    let id = cfg.name.clone().unwrap_or_else(|| cfg.model.kind().to_string());
    let mut rows = Rows::new(&id, cfg.replicas, cfg.seed);
    if cmd == Command::Analytic {
        model_constants(&model, cfg.seed, &mut rows)?;
    }
    let selected: Vec<&ObservableSpec> = cfg.observables.iter().filter(|o| cmd.accepts(o)).collect();
    if selected.is_empty() && cmd != Command::Analytic {
        return Err(Error::Config(format!("config has no observables for `{}`", cmd.name())));
    }
    for o in selected {
        match (cmd, o) {
            (Command::Analytic, ObservableSpec::Current { points: p } | ObservableSpec::Covariance { points: p }) => {
                limit_grid(&model, &points(p), cfg.seed, &mut rows)?
            }
            (Command::Simulate, ObservableSpec::Current { points: p }) => simulate_current(&model, p, cfg, &mut rows)?,
            (Command::Simulate, ObservableSpec::LabelTails { t, kmax, lambda }) => {
                label_tails(&model, *t, *kmax, *lambda, cfg, &mut rows)?
            }
            (Command::Identity, ObservableSpec::Identity { t, z, sites }) => {
                identity(&model, *t, *z, sites, cfg, &mut rows)?
            }
            (Command::Scaling, ObservableSpec::Scaling { times, observer }) => {
                scaling(&model, times, observer.unwrap_or(Observer::Characteristic), cfg, &mut rows)?
            }
            (Command::Covariance, ObservableSpec::Covariance { points: p }) => {
                covariance(&model, &points(p), cfg, &mut rows)?
            }
            _ => unreachable!("filtered by Command::accepts"),
        }
    }
    Ok(rows.rows)
}

/// Constants of the model that need no observation points.
fn model_constants(model: &Model, seed: u64, rows: &mut Rows) -> Result<()> {
    let start = Instant::now();
    let put = |rows: &mut Rows, name: &str, v: f64| rows.exact(name, None, None, v, secs(start));
    match model {
        Model::Iid { kernel, initial, .. } => {
            let (v, s1) = iid::kernel_moments(kernel);
            put(rows, "drift", v);
            put(rows, "sigma1_sq", s1);
            if let Some((mu, s0)) = initial.moments() {
                put(rows, "mu_bar", mu);
                put(rows, "sigma0_sq", s0);
            }
        }
        Model::Rwre { law, .. } => {
            put(rows, "speed", rwre::env_speed(law)?);
            put(rows, "mean_crossing_time", rwre::mean_crossing_time(law)?);
            put(rows, "sigma1_sq", rwre::quenched_sigma1_sq(law, seed, RWRE_SIGMA_SITES)?);
            put(rows, "z_variance_rate", law.z_variance_rate()?);
        }
        Model::Rap { law, inc, .. } => {
            let k = rap::kappa_const(law, RAP_RADIUS)?;
            let (mu, s0) = inc.moments();
            put(rows, "speed", law.v);
            put(rows, "sigma1_sq", law.sigma1_sq);
            put(rows, "sigma_d_sq", k.sigma_d_sq);
            rows.push("kappa", None, None, Measured { value: k.kappa, se: k.kappa_se }, 0, secs(start));
            put(rows, "mu_bar", mu);
            put(rows, "sigma0_sq", s0);
        }
        Model::Asep { params } => {
            put(rows, "flux", gauss::asep_flux(params));
            put(rows, "char_speed", gauss::asep_charspeed(params));
            put(rows, "bias", params.bias());
        }
        Model::Zrp { g, rho } => {
            let nu = zrp::invariant_measure(g, *rho)?;
            put(rows, "fugacity", nu.phi);
            put(rows, "occupation_var", nu.variance());
            put(rows, "flux", nu.flux());
            put(rows, "char_speed", nu.char_speed());
            put(rows, "concavity_ratio", g.r);
        }
    }
    Ok(())
}

type LimitFn = Box<dyn Fn(SpaceTimePoint, SpaceTimePoint) -> Result<f64> + Send + Sync>;

/// Limit covariances on a point grid, for the walk models.
fn limit_cov(model: &Model, seed: u64) -> Result<Option<LimitFn>> {
    Ok(match model {
        Model::Iid { kernel, initial, .. } => {
            let (mu, s0) = initial
                .moments()
                .ok_or_else(|| Error::Domain("limit covariances need a homogeneous initial law".into()))?;
            let mm = ModelMoments::new(mu, s0, iid::kernel_moments(kernel).1)?;
            Some(Box::new(move |a, b| gauss::z_cov(a, b, &mm)))
        }
        Model::Rwre { law, mu, .. } => {
            let s1 = rwre::quenched_sigma1_sq(law, seed, RWRE_SIGMA_SITES)?;
            let mu = *mu;
            Some(Box::new(move |a, b| Ok(mu * (gauss::gamma1(a, b, s1)? + gauss::gamma2(a, b, s1)?))))
        }
        Model::Rap { law, inc, .. } => {
            let (mu, s0) = inc.moments();
            let kappa = rap::kappa_const(law, RAP_RADIUS)?.kappa;
            let mm = ModelMoments::new(mu, s0, law.sigma1_sq)?.with_kappa(kappa)?;
            Some(Box::new(move |a, b| gauss::rap_cov(a, b, &mm)))
        }
        Model::Asep { .. } | Model::Zrp { .. } => None,
    })
}

fn limit_grid(model: &Model, pts: &[SpaceTimePoint], seed: u64, rows: &mut Rows) -> Result<()> {
    let start = Instant::now();
    let Some(f) = limit_cov(model, seed)? else {
        return Ok(());
    };
    for i in 0..pts.len() {
        for j in 0..=i {
            let v = f(pts[i], pts[j])?;
            rows.exact(&format!("limit_cov_{i}_{j}"), Some(pts[i].t), Some(pts[i].r), v, secs(start));
        }
    }
    Ok(())
}

/// Environment range wide enough for every walker that can reach an observer.
fn rwre_range(law: &EnvLaw, n: u64, pts: &[SpaceTimePoint], spread: i64) -> Result<(i64, i64)> {
    let v = rwre::env_speed(law)?;
    let rn = (n as f64).sqrt();
    let steps = pts.iter().map(|p| floor_robust(n as f64 * p.t)).max().unwrap_or(0);
    let off = pts.iter().map(|p| (n as f64 * p.t * v).abs() + p.r.abs() * rn).fold(0.0, f64::max).ceil() as i64;
    let l = spread * steps + off + 400;
    Ok((-l, l))
}

fn simulate_current(model: &Model, spec: &[PointSpec], cfg: &ExperimentConfig, rows: &mut Rows) -> Result<()> {
    let start = Instant::now();
    let pts = points(spec);
    let m = pts.len();
    let policy = SeedPolicy::new(cfg.seed);
    match model {
        Model::Iid { kernel, initial, n } => {
            let sim = CurrentSim::new(kernel, initial, *n, &pts, LatticeWindow::covering(kernel, *n, &pts)?)?;
            let exact = if m <= 8 { Some(iid::exact_current_moments(kernel, initial, *n, &pts)?) } else { None };
            let mut template = Accumulator::new(names("y", m));
            if let Some(e) = &exact {
                for i in 0..m {
                    template = template.centered(&format!("y{i}"), e.means[i]);
                }
            }
            let acc = run_replicas(&template, cfg.replicas, policy, |s| {
                Ok(sim.sample(s).values.iter().map(|&v| v as f64).collect())
            })?;
            let est = acc.estimate()?;
            let sec = secs(start);
            for (i, p) in spec.iter().enumerate() {
                let y = format!("y{i}");
                rows.measured("mean_Y", p.t, p.x, est.mean_of(&y), sec);
                rows.measured("var_Y", p.t, p.x, est.var_of(&y), sec);
                if let Some(e) = &exact {
                    rows.exact("exact_mean_Y", Some(p.t), Some(p.x), e.means[i], sec);
                    rows.exact("exact_var_Y", Some(p.t), Some(p.x), e.cov[i][i], sec);
                }
            }
        }
        Model::Rwre { law, mu, n } => {
            let (lo, hi) = rwre_range(law, *n, &pts, 3)?;
            let acc = run_replicas(&Accumulator::new(names("y", m)), cfg.replicas, policy, |s| {
                let env = Environment::sample(law, rng::key(s, &[rng::tag::REPLICA]), lo, hi);
                let y = rwre::simulate_rwre_cloud(&env, law, *mu, *n, &pts, s, RWRE_TOL)?;
                Ok(y.iter().map(|&v| v as f64).collect())
            })?;
            let est = acc.estimate()?;
            let sec = secs(start);
            for (i, p) in spec.iter().enumerate() {
                let y = format!("y{i}");
                rows.measured("mean_Y", p.t, p.x, est.mean_of(&y), sec);
                rows.measured("var_Y", p.t, p.x, est.var_of(&y), sec);
            }
        }
        Model::Rap { law, inc, n } => {
            let mut cols = names("y", m);
            cols.extend(names("h", m));
            let acc = run_replicas(&Accumulator::new(cols), cfg.replicas, policy, |s| {
                let out = rap::simulate_rap_current(law, inc, *n, &pts, s, false)?;
                Ok(out.iter().map(|o| o.ybar).chain(out.iter().map(|o| o.hbar * o.hbar)).collect())
            })?;
            let est = acc.estimate()?;
            let sec = secs(start);
            for (i, p) in spec.iter().enumerate() {
                rows.measured("mean_Ybar", p.t, p.x, est.mean_of(&format!("y{i}")), sec);
                rows.measured("var_Ybar", p.t, p.x, est.var_of(&format!("y{i}")), sec);
                rows.measured("mean_Hbar_sq", p.t, p.x, est.mean_of(&format!("h{i}")), sec);
            }
        }
        Model::Asep { params } => {
            let sites: Vec<i64> = spec.iter().map(|p| p.x as i64).collect();
            let horizon = spec.iter().map(|p| p.t).fold(0.0, f64::max);
            let l = (3.0 * horizon + 10.0 * horizon.sqrt()).ceil() as i64 + 1;
            let window = Window::Segment {
                lo: sites.iter().copied().min().unwrap().min(0) - l,
                hi: sites.iter().copied().max().unwrap().max(0) + l + 1,
            };
            let h = gauss::asep_flux(params);
            let expected: Vec<f64> = spec.iter().map(|p| p.t * h - p.x * params.rho).collect();
            let mut template = Accumulator::new(names("j", m));
            for (i, e) in expected.iter().enumerate() {
                template = template.centered(&format!("j{i}"), *e);
            }
            let acc = run_replicas(&template, cfg.replicas, policy, |s| {
                let state = AsepState::bernoulli(window, params.rho, s)?;
                let mut c = CoupledAsep::new(vec![state], params, s)?;
                let meters: Vec<usize> = spec
                    .iter()
                    .map(|p| c.add_meter(MeterSpec { member: 0, x: p.x as i64, t: p.t }))
                    .collect::<Result<_>>()?;
                c.run_until(horizon)?;
                Ok(meters.iter().map(|&k| c.reading(k).unwrap().current as f64).collect())
            })?;
            interacting_rows(&acc.estimate()?, spec, &expected, secs(start), rows);
        }
        Model::Zrp { g, rho } => {
            let nu = zrp::invariant_measure(g, *rho)?;
            let horizon = spec.iter().map(|p| p.t).fold(0.0, f64::max);
            let lo = spec.iter().map(|p| p.x as i64).min().unwrap().min(0);
            let hi = spec.iter().map(|p| p.x as i64).max().unwrap().max(0);
            let window = ZrpWindow::covering(lo, hi, horizon);
            let expected: Vec<f64> = spec.iter().map(|p| p.t * nu.flux() - p.x * rho).collect();
            let mut template = Accumulator::new(names("j", m));
            for (i, e) in expected.iter().enumerate() {
                template = template.centered(&format!("j{i}"), *e);
            }
            let acc = run_replicas(&template, cfg.replicas, policy, |s| {
                let mut c = ZrpCoupled::new(g, window, vec![zrp::sample_stationary(&nu, window, s)], s)?;
                let meters: Vec<usize> = spec
                    .iter()
                    .map(|p| c.add_meter(ZrpMeterSpec { member: 0, x: p.x as i64, t: p.t }))
                    .collect::<Result<_>>()?;
                c.run_until(horizon)?;
                Ok(meters.iter().map(|&k| c.reading(k).unwrap().current as f64).collect())
            })?;
            interacting_rows(&acc.estimate()?, spec, &expected, secs(start), rows);
        }
    }
    Ok(())
}

fn interacting_rows(est: &crate::harness::Estimates, spec: &[PointSpec], expected: &[f64], sec: f64, rows: &mut Rows) {
    for (i, p) in spec.iter().enumerate() {
        let j = format!("j{i}");
        rows.measured("mean_J", p.t, p.x, est.mean_of(&j), sec);
        rows.measured("var_J", p.t, p.x, est.var_of(&j), sec);
        rows.exact("expected_J", Some(p.t), Some(p.x), expected[i], sec);
    }
}

fn covariance(model: &Model, pts: &[SpaceTimePoint], cfg: &ExperimentConfig, rows: &mut Rows) -> Result<()> {
    let start = Instant::now();
    let m = pts.len();
    let policy = SeedPolicy::new(cfg.seed);
    let limit = limit_cov(model, cfg.seed)?.expect("walk model");
    let pairs: Vec<(usize, usize)> = (0..m).flat_map(|i| (0..=i).map(move |j| (i, j))).collect();
    let at = |i: usize| (Some(pts[i].t), Some(pts[i].r));
    match model {
        Model::Iid { kernel, initial, n } => {
            let sim = CurrentSim::new(kernel, initial, *n, pts, LatticeWindow::covering(kernel, *n, pts)?)?;
            let acc = run_replicas(&Accumulator::new(names("y", m)), cfg.replicas, policy, |s| {
                Ok(sim.sample(s).centered_scaled)
            })?;
            let est = acc.estimate()?;
            let exact = if m <= 8 { Some(iid::exact_current_moments(kernel, initial, *n, pts)?) } else { None };
            let sec = secs(start);
            let rn = (*n as f64).sqrt();
            for &(i, j) in &pairs {
                let (t, x) = at(i);
                rows.push(&format!("cov_{i}_{j}"), t, x, est.cov_of(&format!("y{i}"), &format!("y{j}")), cfg.replicas, sec);
                if let Some(e) = &exact {
                    rows.exact(&format!("exact_cov_{i}_{j}"), t, x, e.cov[i][j] / rn, sec);
                }
                rows.exact(&format!("limit_cov_{i}_{j}"), t, x, limit(pts[i], pts[j])?, sec);
            }
        }
        Model::Rwre { law, mu, n } => {
            // Exact quenched covariances per environment against the limit at
            // the environment-shifted points.
            let (lo, hi) = rwre_range(law, *n, pts, 4)?;
            let rn = (*n as f64).sqrt();
            let mut cols = Vec::new();
            for &(i, j) in &pairs {
                cols.push(format!("q{i}_{j}"));
                cols.push(format!("l{i}_{j}"));
            }
            let acc = run_replicas(&Accumulator::new(cols), cfg.replicas, policy, |s| {
                let env = Environment::sample(law, s, lo, hi);
                let cov = rwre::quenched_current_cov(&env, law, *mu, *n, pts, RWRE_TOL)?;
                let shifted: Vec<SpaceTimePoint> = pts
                    .iter()
                    .map(|p| Ok(SpaceTimePoint::new(p.t, p.r + rwre::z_correction(&env, law, *n, p.t, RWRE_TOL)? / rn)))
                    .collect::<Result<_>>()?;
                let mut out = Vec::new();
                for &(i, j) in &pairs {
                    out.push(cov[i][j] / rn);
                    out.push(limit(shifted[i], shifted[j])?);
                }
                Ok(out)
            })?;
            let est = acc.estimate()?;
            let sec = secs(start);
            for &(i, j) in &pairs {
                let (t, x) = at(i);
                let (q, l) = (format!("q{i}_{j}"), format!("l{i}_{j}"));
                rows.push(&format!("quenched_cov_{i}_{j}"), t, x, est.mean_of(&q), cfg.replicas, sec);
                rows.push(&format!("shifted_limit_cov_{i}_{j}"), t, x, est.mean_of(&l), cfg.replicas, sec);
                rows.push(&format!("cov_gap_{i}_{j}"), t, x, est.combination(&[(&q, 1.0), (&l, -1.0)]), cfg.replicas, sec);
                rows.exact(&format!("limit_cov_{i}_{j}"), t, x, limit(pts[i], pts[j])?, sec);
            }
        }
        Model::Rap { law, inc, n } => {
            // Cov Ȳ = Cov(E[Ȳ|ω]) + E Cov(Ȳ|ω), the inner moments being exact.
            let mut cols = names("m", m);
            cols.extend(pairs.iter().map(|(i, j)| format!("c{i}_{j}")));
            let acc = run_replicas(&Accumulator::new(cols), cfg.replicas, policy, |s| {
                let c = rap::rap_conditional_moments(law, inc, *n, pts, s)?;
                let mut row = c.mean.clone();
                row.extend(pairs.iter().map(|&(i, j)| c.cov[i][j]));
                Ok(row)
            })?;
            let est = acc.estimate()?;
            let sec = secs(start);
            for &(i, j) in &pairs {
                let (t, x) = at(i);
                let outer = est.cov_of(&format!("m{i}"), &format!("m{j}"));
                let inner = est.mean_of(&format!("c{i}_{j}"));
                let total = Measured { value: outer.value + inner.value, se: outer.se.hypot(inner.se) };
                rows.push(&format!("cov_{i}_{j}"), t, x, total, cfg.replicas, sec);
                rows.exact(&format!("limit_cov_{i}_{j}"), t, x, limit(pts[i], pts[j])?, sec);
            }
        }
        Model::Asep { .. } | Model::Zrp { .. } => unreachable!("rejected by validate"),
    }
    Ok(())
}

fn identity(model: &Model, t: f64, z: Option<i64>, sites: &[i64], cfg: &ExperimentConfig, rows: &mut Rows) -> Result<()> {
    let start = Instant::now();
    match model {
        Model::Asep { params } => {
            let c = asep::IdentityConfig { t, z, sites: sites.to_vec(), replicas: cfg.replicas, seed: cfg.seed, goal1_radius: None };
            let r = asep::identity_suite(params, &c)?;
            let (sec, x) = (secs(start), r.z as f64);
            rows.measured("var_J", t, x, r.var_current, sec);
            rows.measured("scaled_abs_Q", t, x, r.scaled_abs_q, sec);
            rows.measured("var_J_minus_scaled_abs_Q", t, x, r.var_minus_q, sec);
            rows.measured("mean_J", t, x, r.mean_current, sec);
            rows.exact("expected_J", Some(t), Some(x), r.expected_current, sec);
            rows.measured("Q_over_t", t, 0.0, r.speed, sec);
            rows.exact("char_speed", Some(t), None, r.char_speed, sec);
            rows.measured("martingale", t, 0.0, r.martingale, sec);
            for s in &r.sites {
                rows.measured("site_cov", t, s.j as f64, s.cov, sec);
                rows.measured("scaled_prob_Q", t, s.j as f64, s.scaled_prob, sec);
                rows.measured("site_cov_minus_scaled_prob", t, s.j as f64, s.diff, sec);
            }
        }
        Model::Zrp { g, rho } => {
            let c = zrp::ZrpIdentityConfig { rho: *rho, t, z, sites: sites.to_vec(), replicas: cfg.replicas, seed: cfg.seed };
            let r = zrp::zrp_identity_suite(g, &c)?;
            let (sec, x) = (secs(start), r.z as f64);
            rows.measured("var_J", t, x, r.var_current, sec);
            rows.measured("scaled_abs_Q", t, x, r.scaled_abs_q, sec);
            rows.measured("var_J_minus_scaled_abs_Q", t, x, r.var_minus_q, sec);
            rows.measured("mean_J", t, x, r.mean_current, sec);
            rows.exact("expected_J", Some(t), Some(x), r.expected_current, sec);
            rows.measured("Q_over_t", t, 0.0, r.speed, sec);
            rows.exact("char_speed", Some(t), None, r.char_speed, sec);
            rows.measured("martingale", t, 0.0, r.martingale, sec);
            for s in &r.sites {
                rows.measured("site_cov", t, s.j as f64, s.cov, sec);
                rows.measured("scaled_prob_Q", t, s.j as f64, s.scaled_prob, sec);
                rows.measured("site_cov_minus_scaled_prob", t, s.j as f64, s.diff, sec);
            }
        }
        _ => unreachable!("rejected by validate"),
    }
    Ok(())
}

fn scaling(model: &Model, times: &[f64], observer: Observer, cfg: &ExperimentConfig, rows: &mut Rows) -> Result<()> {
    let start = Instant::now();
    let (series, fit) = match model {
        Model::Asep { params } => {
            let s = asep::current_variance_series(params, observer, times, cfg.replicas, cfg.seed)?;
            let fit = asep::variance_slope(&s, cfg.seed)?;
            (s.iter().map(|p| (p.t, p.x, p.mean, p.var, p.seconds)).collect::<Vec<_>>(), fit)
        }
        Model::Zrp { g, rho } => {
            let s = zrp::zrp_variance_series(g, *rho, times, cfg.replicas, cfg.seed)?;
            let fit = zrp::zrp_variance_slope(&s, cfg.seed)?;
            (s.iter().map(|p| (p.t, p.x, p.mean, p.var, p.seconds)).collect(), fit)
        }
        _ => unreachable!("rejected by validate"),
    };
    for (t, x, mean, var, sec) in series {
        rows.measured("mean_J", t, x as f64, mean, sec);
        rows.measured("var_J", t, x as f64, var, sec);
    }
    rows.push("slope", None, None, Measured { value: fit.slope, se: fit.slope_se }, cfg.replicas, secs(start));
    Ok(())
}

fn label_tails(model: &Model, t: f64, kmax: i64, lambda: f64, cfg: &ExperimentConfig, rows: &mut Rows) -> Result<()> {
    let start = Instant::now();
    match model {
        Model::Asep { params } => {
            let tail = asep::label_tail(params, lambda, t, kmax, cfg.replicas, cfg.seed)?;
            let sec = secs(start);
            for p in tail {
                rows.measured("label_tail_ge", t, p.k as f64, p.prob, sec);
                rows.exact("tail_bound", Some(t), Some(p.k as f64), p.bound, sec);
            }
        }
        Model::Zrp { g, rho } => {
            let tail = zrp::label_tails(g, *rho, lambda, t, kmax, cfg.replicas, cfg.seed)?;
            let sec = secs(start);
            for p in tail {
                rows.measured("y_tail_ge", t, p.k as f64, p.y_tail, sec);
                rows.measured("z_tail_le_minus", t, p.k as f64, p.z_tail, sec);
                rows.exact("tail_bound", Some(t), Some(p.k as f64), p.bound, sec);
            }
        }
        _ => unreachable!("rejected by validate"),
    }
    Ok(())
}

/// Fixed exact checks on small systems: ring stationarity, Monte Carlo
/// against the transient law, and coupling rate tables.
pub fn run_oracle(seed: u64, replicas: u64) -> Result<Vec<ResultRow>> {
    let mut rows = Rows::new("oracle", replicas, seed);
    let start = Instant::now();
    let (p, q) = (0.7, 0.3);
    let ring = FiniteModel::Asep { p, q, lattice: Lattice::Ring { len: 4 }, particles: 2 };
    let g = Generator::build(&ring)?;
    let pi = vec![1.0 / g.len() as f64; g.len()];
    let residual = g.left_apply(&pi).iter().fold(0.0f64, |m, x| m.max(x.abs()));
    rows.exact("ring_stationary_residual", None, Some(4.0), residual, secs(start));

    let start = Instant::now();
    let init = [1, 1, 0, 0];
    let law = g.transient_law(&g.delta(&init)?, 1.0)?;
    let w = Window::Ring { len: 4 };
    let initial = Initial::State(AsepState::new(w, init.iter().map(|&v| v as u8).collect())?);
    let params = AsepParams::new(p, q, 0.5)?;
    let policy = SeedPolicy::new(seed);
    let mut samples = Vec::with_capacity(replicas as usize);
    for r in 0..replicas {
        let run = asep::asep_run(&initial, &params, 1.0, w, policy.replica_seed(r), false)?;
        samples.push(run.state.occ.iter().map(|&v| v as i64).collect::<Vec<_>>());
    }
    let tv = oracle::total_variation(&g.empirical(&samples)?, &law);
    rows.push("ring_tv", Some(1.0), Some(4.0), Measured { value: tv, se: 0.0 }, replicas, secs(start));

    let start = Instant::now();
    let (pe, qe) = oracle::exact_pq(7, 10);
    let basic = oracle::asep_basic_diff(pe, qe);
    rows.exact("basic_coupling_mismatches", None, None, basic.mismatches.len() as f64, secs(start));
    let start = Instant::now();
    let label: usize = oracle::asep_concavity_diff(pe, qe).iter().map(|d| d.mismatches.len()).sum();
    rows.exact("label_coupling_mismatches", None, None, label as f64, secs(start));
    let start = Instant::now();
    let table = [exact(1, 2), exact(3, 4), exact(7, 8), exact(15, 16)];
    let zr: usize = oracle::zrp_label_diff(&table, 4)?.iter().map(|d| d.mismatches.len()).sum();
    rows.exact("zrp_label_mismatches", None, None, zr as f64, secs(start));

    let start = Instant::now();
    let g = RateFn::exp_saturating(1.0, 1.0)?;
    let nu = zrp::invariant_measure(&g, 1.0)?;
    let (worst, tail) = oracle::zrp_cylinder_balance(&g, &nu, 3);
    rows.exact("zrp_cylinder_balance", None, None, worst, secs(start));
    rows.exact("zrp_cylinder_tail", None, None, tail, secs(start));
    Ok(rows.rows)
}

/// Write rows with the fixed header. With `timing` off the seconds column is
/// zero, which makes the output a pure function of config and seed.
pub fn write_csv<W: Write>(rows: &[ResultRow], out: W, timing: bool) -> Result<()> {
    let io = |e: csv::Error| Error::Resource(format!("writing CSV: {e}"));
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(CSV_HEADER.split(',')).map_err(io)?;
    for r in rows {
        if timing {
            w.serialize(r).map_err(io)?;
        } else {
            w.serialize(ResultRow { seconds: 0.0, ..r.clone() }).map_err(io)?;
        }
    }
    w.flush().map_err(|e| Error::Resource(format!("writing CSV: {e}")))?;
    Ok(())
}

/// Output destination: an explicit path wins over the config's; relative
/// paths go under `dir` when it is set. With no path but a directory the file
/// is `<experiment>-<command>.csv`. `None` means standard output.
pub fn output_path(explicit: Option<&Path>, cfg: Option<&ExperimentConfig>, dir: Option<&Path>, cmd: Command) -> Option<PathBuf> {
    let path = explicit.map(Path::to_path_buf).or_else(|| cfg.and_then(|c| c.output.clone()));
    match (path, dir) {
        (Some(p), Some(d)) if p.is_relative() => Some(d.join(p)),
        (Some(p), _) => Some(p),
        (None, Some(d)) => {
            let id = cfg.map(|c| c.name.clone().unwrap_or_else(|| c.model.kind().to_string())).unwrap_or_else(|| "oracle".into());
            Some(d.join(format!("{id}-{}.csv", cmd.name())))
        }
        (None, None) => None,
    }
}

/// Size the global worker pool. Results do not depend on the count.
pub fn set_threads(n: usize) -> Result<()> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(format!("cannot set thread count: {e}")))
}

//! Time stepping for dx = B(x,x)dt − Ax dt + σ dW: single steps, adaptive
//! deterministic flows, and seeded ensembles that reduce to the same numbers
//! for any worker count.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{self, Mat};
use crate::stats::{quantile_sorted, wilson_interval, Moments};
use crate::system::{coords, SdeSystem};
use crate::tensor::energy_residual_certificate;

/// Largest tolerated fraction of non-finite paths before a run is invalid.
pub const MAX_FAILURE_FRACTION: f64 = 1e-3;
/// Paths per parallel work unit. Fixed so that reduction order never depends
/// on the number of workers.
const CHUNK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    TamedEuler,
    EulerMaruyama,
    Rk4Deterministic,
}

impl FromStr for Scheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tamed_euler" => Ok(Scheme::TamedEuler),
            "euler_maruyama" => Ok(Scheme::EulerMaruyama),
            "rk4_deterministic" => Ok(Scheme::Rk4Deterministic),
            _ => Err(Error::OutOfRange(format!("unknown scheme `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegratorConfig {
    pub dt: f64,
    pub scheme: Scheme,
    pub t_max: f64,
    pub record_stride: usize,
}

impl IntegratorConfig {
    pub fn new(dt: f64, t_max: f64) -> Result<Self> {
        let c = IntegratorConfig { dt, scheme: Scheme::TamedEuler, t_max, record_stride: 1 };
        c.validate()?;
        Ok(c)
    }

    pub fn with_scheme(mut self, scheme: Scheme) -> Self {
        self.scheme = scheme;
        self
    }

    pub fn with_stride(mut self, stride: usize) -> Result<Self> {
        self.record_stride = stride;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::OutOfRange(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.t_max >= self.dt && self.t_max.is_finite()) {
            return Err(Error::OutOfRange(format!("need dt <= t_max, got dt = {}, t_max = {}", self.dt, self.t_max)));
        }
        if self.record_stride == 0 {
            return Err(Error::OutOfRange("record_stride must be at least 1".into()));
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        (self.t_max / self.dt - 1e-9).ceil().max(1.0) as usize
    }

    /// Time after `k` steps.
    pub fn time(&self, k: usize) -> f64 {
        if k >= self.steps() {
            self.t_max
        } else {
            k as f64 * self.dt
        }
    }

    /// Recorded step indices: every stride-th step and the final one.
    pub fn grid_steps(&self) -> Vec<usize> {
        let n = self.steps();
        let mut g: Vec<usize> = (0..=n).step_by(self.record_stride).collect();
        if *g.last().unwrap() != n {
            g.push(n);
        }
        g
    }

    pub fn grid(&self) -> Vec<f64> {
        self.grid_steps().into_iter().map(|k| self.time(k)).collect()
    }
}

/// dt = min(1e−3, 0.1/(1+|x0|)): the drift at energy K acts on time scale 1/K.
pub fn default_dt(x0: &[f64]) -> f64 {
    1e-3f64.min(0.1 / (1.0 + linalg::norm(x0)))
}

/// Per-path Gaussian streams: path i draws from ChaCha8 stream i of the master
/// seed, so its increments do not depend on which thread runs it or when.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngPolicy {
    pub master_seed: u64,
}

impl RngPolicy {
    pub fn new(master_seed: u64) -> Self {
        RngPolicy { master_seed }
    }

    pub fn path_rng(&self, path: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master_seed);
        rng.set_stream(path);
        rng
    }
}

/// Worker pool for path-parallel runs. The worker count only affects speed.
#[derive(Debug, Clone)]
pub struct Executor {
    pool: Arc<rayon::ThreadPool>,
    workers: usize,
}

impl Executor {
    pub fn new(workers: usize) -> Result<Self> {
        if workers == 0 {
            return Err(Error::OutOfRange("worker count must be positive".into()));
        }
        let pool = rayon::ThreadPoolBuilder::new().num_threads(workers).build().map_err(|e| Error::OutOfRange(format!("cannot start {workers} workers: {e}")))?;
        Ok(Executor { pool: Arc::new(pool), workers })
    }

    /// Worker count from `LAB_WORKERS`, else the available parallelism.
    pub fn from_env() -> Result<Self> {
        let workers = match std::env::var("LAB_WORKERS") {
            Ok(v) => v.trim().parse::<usize>().map_err(|_| Error::OutOfRange(format!("LAB_WORKERS must be a positive integer, got `{v}`")))?,
            Err(_) => std::thread::available_parallelism().map_or(1, |n| n.get()),
        };
        Executor::new(workers)
    }

    pub fn workers(&self) -> usize {
        self.workers
    }

    /// f(0..count) in index order.
    pub fn map<T: Send>(&self, count: usize, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
        self.pool.install(|| (0..count).into_par_iter().map(&f).collect())
    }

    /// Folds f(0..count) into `acc` chunk by chunk in index order.
    pub fn for_each_ordered<T: Send>(&self, count: usize, f: impl Fn(usize) -> T + Sync + Send, mut acc: impl FnMut(usize, T)) {
        let mut start = 0;
        while start < count {
            let end = (start + CHUNK).min(count);
            let out: Vec<T> = self.pool.install(|| (start..end).into_par_iter().map(&f).collect());
            for (i, v) in out.into_iter().enumerate() {
                acc(start + i, v);
            }
            start = end;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Observable {
    Energy,
    Dissipation,
    PerpNormSq,
    Coordinate(usize),
    AbsCoordinate(usize),
    /// |Π_ker x|².
    KernelComponent,
    /// ⟨x⟩^p = (1 + |x|²)^{p/2}.
    JapaneseBracketPower(f64),
}

impl Observable {
    pub fn eval(&self, system: &SdeSystem, x: &[f64]) -> f64 {
        match *self {
            Observable::Energy => x.iter().map(|v| v * v).sum(),
            Observable::Dissipation => dissipation_fast(system.damping.matrix(), x),
            Observable::PerpNormSq => coords(system.decomposition.q_perp(), x).norm_squared(),
            Observable::Coordinate(i) => x.get(i).copied().unwrap_or(f64::NAN),
            Observable::AbsCoordinate(i) => x.get(i).map_or(f64::NAN, |v| v.abs()),
            Observable::KernelComponent => coords(system.decomposition.q_ker(), x).norm_squared(),
            Observable::JapaneseBracketPower(p) => (1.0 + x.iter().map(|v| v * v).sum::<f64>()).powf(p / 2.0),
        }
    }

    pub fn check(&self, dim: usize) -> Result<()> {
        match *self {
            Observable::Coordinate(i) | Observable::AbsCoordinate(i) if i >= dim => Err(Error::OutOfRange(format!("coordinate {i} out of range for dimension {dim}"))),
            Observable::JapaneseBracketPower(p) if !p.is_finite() => Err(Error::OutOfRange("bracket power must be finite".into())),
            _ => Ok(()),
        }
    }
}

impl fmt::Display for Observable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Observable::Energy => write!(f, "energy"),
            Observable::Dissipation => write!(f, "dissipation"),
            Observable::PerpNormSq => write!(f, "perp_norm_sq"),
            Observable::Coordinate(i) => write!(f, "coordinate({i})"),
            Observable::AbsCoordinate(i) => write!(f, "abs_coordinate({i})"),
            Observable::KernelComponent => write!(f, "kernel_component"),
            Observable::JapaneseBracketPower(p) => write!(f, "japanese_bracket_power({p})"),
        }
    }
}

impl FromStr for Observable {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::OutOfRange(format!("unknown observable `{s}`"));
        let arg = |name: &str| s.strip_prefix(name).and_then(|r| r.strip_prefix('(')).and_then(|r| r.strip_suffix(')'));
        Ok(match s {
            "energy" => Observable::Energy,
            "dissipation" => Observable::Dissipation,
            "perp_norm_sq" => Observable::PerpNormSq,
            "kernel_component" => Observable::KernelComponent,
            _ => {
                if let Some(a) = arg("coordinate") {
                    Observable::Coordinate(a.trim().parse().map_err(|_| bad())?)
                } else if let Some(a) = arg("abs_coordinate") {
                    Observable::AbsCoordinate(a.trim().parse().map_err(|_| bad())?)
                } else if let Some(a) = arg("japanese_bracket_power") {
                    Observable::JapaneseBracketPower(a.trim().parse().map_err(|_| bad())?)
                } else {
                    return Err(bad());
                }
            }
        })
    }
}

/// Comma-separated observable list.
pub fn parse_observables(s: &str) -> Result<Vec<Observable>> {
    s.split(',').filter(|t| !t.trim().is_empty()).map(str::parse).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Cmp {
    Lt,
    Le,
    Gt,
    Ge,
}

impl Cmp {
    fn holds(self, a: f64, b: f64) -> bool {
        match self {
            Cmp::Lt => a < b,
            Cmp::Le => a <= b,
            Cmp::Gt => a > b,
            Cmp::Ge => a >= b,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Predicate {
    Always,
    Never,
    Compare { observable: Observable, op: Cmp, threshold: f64 },
    And(Vec<Predicate>),
    Or(Vec<Predicate>),
}

impl Predicate {
    pub fn holds(&self, system: &SdeSystem, x: &[f64]) -> bool {
        match self {
            Predicate::Always => true,
            Predicate::Never => false,
            Predicate::Compare { observable, op, threshold } => op.holds(observable.eval(system, x), *threshold),
            Predicate::And(ps) => ps.iter().all(|p| p.holds(system, x)),
            Predicate::Or(ps) => ps.iter().any(|p| p.holds(system, x)),
        }
    }
}

/// First recorded grid time at which `predicate` holds; paths still running at
/// `censor_time` are censored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoppingRule {
    pub predicate: Predicate,
    pub censor_time: f64,
}

/// Dense A and σ with diagonal fast paths, plus scratch buffers.
struct Stepper<'a> {
    system: &'a SdeSystem,
    a_diag: Option<Vec<f64>>,
    sigma_diag: Option<Vec<f64>>,
    f: Vec<f64>,
    tmp: Vec<f64>,
    k: [Vec<f64>; 4],
    dw: Vec<f64>,
}

impl<'a> Stepper<'a> {
    fn new(system: &'a SdeSystem) -> Self {
        let n = system.dim();
        let a_diag = system.damping.is_diagonal().then(|| system.damping.matrix().diagonal().iter().copied().collect());
        let s = system.noise.matrix();
        let sigma_diag = (s.is_square() && (0..n).all(|i| (0..n).all(|j| i == j || s[(i, j)] == 0.0))).then(|| s.diagonal().iter().copied().collect());
        Stepper {
            system,
            a_diag,
            sigma_diag,
            f: vec![0.0; n],
            tmp: vec![0.0; n],
            k: [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]],
            dw: vec![0.0; system.noise.driving_dim()],
        }
    }

    fn drift(system: &SdeSystem, a_diag: &Option<Vec<f64>>, x: &[f64], out: &mut [f64]) {
        system.tensor.eval_into(x, x, out);
        match a_diag {
            Some(d) => out.iter_mut().zip(d).zip(x).for_each(|((o, a), xi)| *o -= a * xi),
            None => {
                let a = system.damping.matrix();
                for (i, o) in out.iter_mut().enumerate() {
                    *o -= (0..x.len()).map(|j| a[(i, j)] * x[j]).sum::<f64>();
                }
            }
        }
    }

    fn add_noise(&self, x: &mut [f64]) {
        match &self.sigma_diag {
            Some(d) => x.iter_mut().zip(d).zip(&self.dw).for_each(|((xi, s), w)| *xi += s * w),
            None => {
                let s = self.system.noise.matrix();
                for (i, xi) in x.iter_mut().enumerate() {
                    *xi += (0..self.dw.len()).map(|j| s[(i, j)] * self.dw[j]).sum::<f64>();
                }
            }
        }
    }

    /// One step in place using the increments already in `self.dw`.
    fn advance(&mut self, scheme: Scheme, x: &mut [f64], dt: f64) {
        match scheme {
            Scheme::TamedEuler | Scheme::EulerMaruyama => {
                Self::drift(self.system, &self.a_diag, x, &mut self.f);
                let scale = if scheme == Scheme::TamedEuler { dt / (1.0 + dt * linalg::norm(&self.f)) } else { dt };
                x.iter_mut().zip(&self.f).for_each(|(xi, fi)| *xi += scale * fi);
                self.add_noise(x);
            }
            Scheme::Rk4Deterministic => self.rk4(x, dt),
        }
    }

    fn rk4(&mut self, x: &mut [f64], h: f64) {
        let n = x.len();
        let [k1, k2, k3, k4] = &mut self.k;
        Self::drift(self.system, &self.a_diag, x, k1);
        for i in 0..n {
            self.tmp[i] = x[i] + 0.5 * h * k1[i];
        }
        Self::drift(self.system, &self.a_diag, &self.tmp, k2);
        for i in 0..n {
            self.tmp[i] = x[i] + 0.5 * h * k2[i];
        }
        Self::drift(self.system, &self.a_diag, &self.tmp, k3);
        for i in 0..n {
            self.tmp[i] = x[i] + h * k3[i];
        }
        Self::drift(self.system, &self.a_diag, &self.tmp, k4);
        for i in 0..n {
            x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
}

fn dissipation_fast(a: &Mat, x: &[f64]) -> f64 {
    let n = x.len();
    let mut s = 0.0;
    for i in 0..n {
        if x[i] == 0.0 {
            continue;
        }
        for j in 0..n {
            s += x[i] * a[(i, j)] * x[j];
        }
    }
    s.max(0.0)
}

/// x′ for one step with a caller-supplied increment ΔW ~ N(0, dt·I_m).
pub fn step(system: &SdeSystem, scheme: Scheme, x: &[f64], dt: f64, noise_increment: &[f64]) -> Result<Vec<f64>> {
    check_dim(system.dim(), x.len())?;
    let mut s = Stepper::new(system);
    if scheme != Scheme::Rk4Deterministic {
        check_dim(s.dw.len(), noise_increment.len())?;
        s.dw.copy_from_slice(noise_increment);
    }
    let mut y = x.to_vec();
    s.advance(scheme, &mut y, dt);
    if y.iter().all(|v| v.is_finite()) {
        Ok(y)
    } else {
        Err(Error::OutOfRange("step produced a non-finite state".into()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Control {
    Continue,
    Stop,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PathEnd {
    Completed,
    Stopped {
        step: usize,
        time: f64,
    },
    /// Non-finite state at the given time.
    Failed(f64),
}

/// Integrates one path and calls `observe(step, t, x)` at every recorded grid
/// point, starting with t = 0. Returning `Control::Stop` ends the path.
pub fn integrate_path(
    system: &SdeSystem,
    x0: &[f64],
    config: &IntegratorConfig,
    rng: &RngPolicy,
    path: u64,
    mut observe: impl FnMut(usize, f64, &[f64]) -> Control,
) -> Result<PathEnd> {
    check_dim(system.dim(), x0.len())?;
    config.validate()?;
    let mut st = Stepper::new(system);
    let mut r = rng.path_rng(path);
    let mut x = x0.to_vec();
    let n = config.steps();
    let stride = config.record_stride;
    if observe(0, 0.0, &x) == Control::Stop {
        return Ok(PathEnd::Stopped { step: 0, time: 0.0 });
    }
    for k in 1..=n {
        let t0 = config.time(k - 1);
        let h = config.time(k) - t0;
        if config.scheme != Scheme::Rk4Deterministic {
            let sq = h.sqrt();
            st.dw.iter_mut().for_each(|w| *w = sq * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut r));
        }
        st.advance(config.scheme, &mut x, h);
        if !x.iter().all(|v| v.is_finite()) {
            return Ok(PathEnd::Failed(config.time(k)));
        }
        if (k % stride == 0 || k == n) && observe(k, config.time(k), &x) == Control::Stop {
            return Ok(PathEnd::Stopped { step: k, time: config.time(k) });
        }
    }
    Ok(PathEnd::Completed)
}

/// Recorded observable series of a single path: values[grid][observable].
pub fn simulate_path(
    system: &SdeSystem,
    x0: &[f64],
    config: &IntegratorConfig,
    rng: &RngPolicy,
    path: u64,
    observables: &[Observable],
) -> Result<(Vec<f64>, Vec<Vec<f64>>, PathEnd)> {
    for o in observables {
        o.check(system.dim())?;
    }
    let mut grid = Vec::new();
    let mut values = Vec::new();
    let end = integrate_path(system, x0, config, rng, path, |_, t, x| {
        grid.push(t);
        values.push(observables.iter().map(|o| o.eval(system, x)).collect());
        Control::Continue
    })?;
    Ok((grid, values, end))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
}

/// Adaptive classical RK4 (step doubling with Richardson correction) for
/// dz/dt = B(z,z), or with −Az when `damped`. The local error per step is held
/// below tolerance·(1+|z|)·h/T, so the global error is O(tolerance·(1+|z|)).
pub fn deterministic_flow(system: &SdeSystem, x0: &[f64], t_end: f64, tolerance: f64, damped: bool) -> Result<Trajectory> {
    check_dim(system.dim(), x0.len())?;
    if !(t_end > 0.0 && tolerance > 0.0) {
        return Err(Error::OutOfRange("deterministic_flow needs T > 0 and tolerance > 0".into()));
    }
    let flow_system;
    let sys = if damped {
        system
    } else {
        flow_system =
            SdeSystem::new("conservative", system.tensor.clone(), crate::system::DampingOperator::new(Mat::zeros(system.dim(), system.dim()))?, system.noise.clone(), None)?;
        &flow_system
    };
    let mut st = Stepper::new(sys);
    let mut t = 0.0;
    let mut x = x0.to_vec();
    let mut h = (t_end / 100.0).min(0.1 / (1.0 + linalg::norm(x0)));
    let mut traj = Trajectory { times: vec![0.0], states: vec![x.clone()] };
    let (mut full, mut half) = (vec![0.0; x.len()], vec![0.0; x.len()]);
    while t < t_end {
        h = h.min(t_end - t);
        if h < 1e-14 * t_end.max(1.0) {
            return Err(Error::StepUnderflow(t));
        }
        full.copy_from_slice(&x);
        st.rk4(&mut full, h);
        half.copy_from_slice(&x);
        st.rk4(&mut half, 0.5 * h);
        st.rk4(&mut half, 0.5 * h);
        let err = full.iter().zip(&half).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt() / 15.0;
        let allowed = tolerance * (1.0 + linalg::norm(&half)) * h / t_end;
        if !err.is_finite() {
            h *= 0.25;
            continue;
        }
        if err <= allowed {
            for (xi, (b, a)) in x.iter_mut().zip(half.iter().zip(&full)) {
                *xi = b + (b - a) / 15.0;
            }
            t = if t_end - t - h < 1e-15 * t_end { t_end } else { t + h };
            traj.times.push(t);
            traj.states.push(x.clone());
        }
        let factor = if err == 0.0 { 4.0 } else { (0.9 * (allowed / err).powf(0.2)).clamp(0.2, 4.0) };
        h *= factor;
    }
    Ok(traj)
}

/// Initial condition for an ensemble: one point, or a function of the path index.
#[derive(Clone)]
pub enum Initial {
    Point(Vec<f64>),
    PerPath(Arc<dyn Fn(u64) -> Vec<f64> + Send + Sync>),
}

impl Initial {
    fn get(&self, path: u64) -> Vec<f64> {
        match self {
            Initial::Point(x) => x.clone(),
            Initial::PerPath(f) => f(path),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleStats {
    pub observables: Vec<String>,
    pub grid: Vec<f64>,
    /// means[observable][grid point]
    pub means: Vec<Vec<f64>>,
    pub variances: Vec<Vec<f64>>,
    pub ses: Vec<Vec<f64>>,
    pub paths: usize,
    pub failures: usize,
    /// False when more than 0.1% of paths failed.
    pub valid: bool,
}

impl EnsembleStats {
    pub fn final_mean(&self, obs: usize) -> f64 {
        *self.means[obs].last().unwrap()
    }

    pub fn final_se(&self, obs: usize) -> f64 {
        *self.ses[obs].last().unwrap()
    }
}

fn failure_ok(failures: usize, paths: usize) -> bool {
    failures as f64 <= MAX_FAILURE_FRACTION * paths as f64
}

pub fn simulate_ensemble(
    system: &SdeSystem,
    initial: &Initial,
    config: &IntegratorConfig,
    rng: &RngPolicy,
    observables: &[Observable],
    paths: usize,
    exec: &Executor,
) -> Result<EnsembleStats> {
    if paths == 0 {
        return Err(Error::OutOfRange("paths must be at least 1".into()));
    }
    config.validate()?;
    for o in observables {
        o.check(system.dim())?;
    }
    let grid = config.grid();
    let g = grid.len();
    let mut acc = vec![Moments::default(); observables.len() * g];
    let mut failures = 0;
    let mut first_err = None;
    exec.for_each_ordered(
        paths,
        |p| simulate_path(system, &initial.get(p as u64), config, rng, p as u64, observables),
        |_, r| match r {
            Ok((_, vals, PathEnd::Completed)) => {
                for (gi, row) in vals.iter().enumerate() {
                    for (oi, v) in row.iter().enumerate() {
                        acc[oi * g + gi].push(*v);
                    }
                }
            }
            Ok(_) => failures += 1,
            Err(e) => {
                first_err.get_or_insert(e);
            }
        },
    );
    if let Some(e) = first_err {
        return Err(e);
    }
    if failures == paths {
        return Err(Error::AllPathsFailed(paths));
    }
    let pick = |f: &dyn Fn(&Moments) -> f64| -> Vec<Vec<f64>> { (0..observables.len()).map(|o| acc[o * g..(o + 1) * g].iter().map(f).collect()).collect() };
    Ok(EnsembleStats {
        observables: observables.iter().map(|o| o.to_string()).collect(),
        grid,
        means: pick(&|m| m.mean),
        variances: pick(&|m| m.variance()),
        ses: pick(&|m| m.std_error()),
        paths,
        failures,
        valid: failure_ok(failures, paths),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyBalance {
    pub lhs: f64,
    pub rhs: f64,
    pub se: f64,
    pub z_score: f64,
    pub failures: usize,
    pub valid: bool,
}

/// Monte Carlo check of ½E|x_t|² + E∫₀ᵗ D(x_s) ds = (t/2) tr Λ + ½|x0|², with
/// the time integral by the trapezoid rule on every step.
pub fn energy_balance_check(system: &SdeSystem, x0: &[f64], t: f64, dt: f64, paths: usize, rng: &RngPolicy, exec: &Executor) -> Result<EnergyBalance> {
    if !energy_residual_certificate(&system.tensor).passed {
        return Err(Error::InvalidTensor("energy balance needs x·B(x,x) = 0".into()));
    }
    if paths == 0 {
        return Err(Error::OutOfRange("paths must be at least 1".into()));
    }
    let config = IntegratorConfig::new(dt, t)?;
    let a = system.damping.matrix();
    let mut m = Moments::default();
    let mut failures = 0;
    let mut first_err = None;
    exec.for_each_ordered(
        paths,
        |p| {
            let mut integral = 0.0;
            let (mut t_prev, mut d_prev) = (0.0, 0.0);
            let mut last = 0.0;
            let end = integrate_path(system, x0, &config, rng, p as u64, |k, tk, x| {
                let d = dissipation_fast(a, x);
                if k > 0 {
                    integral += 0.5 * (tk - t_prev) * (d + d_prev);
                }
                t_prev = tk;
                d_prev = d;
                last = x.iter().map(|v| v * v).sum::<f64>();
                Control::Continue
            });
            end.map(|e| (e, 0.5 * last + integral))
        },
        |_, r| match r {
            Ok((PathEnd::Completed, y)) => m.push(y),
            Ok(_) => failures += 1,
            Err(e) => {
                first_err.get_or_insert(e);
            }
        },
    );
    if let Some(e) = first_err {
        return Err(e);
    }
    if m.count == 0 {
        return Err(Error::AllPathsFailed(paths));
    }
    let rhs = 0.5 * t * system.noise.trace() + 0.5 * x0.iter().map(|v| v * v).sum::<f64>();
    let se = m.std_error();
    let diff = m.mean - rhs;
    let z = if se > 0.0 {
        diff / se
    } else if diff.abs() <= 1e-9 * rhs.abs().max(1.0) {
        0.0
    } else {
        f64::INFINITY.copysign(diff)
    };
    Ok(EnergyBalance { lhs: m.mean, rhs, se, z_score: z, failures, valid: failure_ok(failures, paths) })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HittingTimes {
    /// Uncensored first-hit times, ascending.
    pub times: Vec<f64>,
    /// (probability, value) pairs at 0.1, 0.25, 0.5, 0.75, 0.9; empty when
    /// every path is censored.
    pub quantiles: Vec<(f64, f64)>,
    pub censored: usize,
    pub censored_fraction: f64,
    pub paths: usize,
    pub failures: usize,
    pub valid: bool,
}

impl HittingTimes {
    /// Fraction of all non-failed paths that hit by time t (censored paths count
    /// as not hit).
    pub fn fraction_by(&self, t: f64) -> f64 {
        let n = self.times.len() + self.censored;
        if n == 0 {
            return 0.0;
        }
        self.times.partition_point(|s| *s <= t) as f64 / n as f64
    }
}

/// First recorded times at which `rule` holds, per path.
pub fn hitting_time(system: &SdeSystem, initial: &Initial, rule: &StoppingRule, config: &IntegratorConfig, rng: &RngPolicy, paths: usize, exec: &Executor) -> Result<HittingTimes> {
    if !(rule.censor_time <= config.t_max) {
        return Err(Error::OutOfRange(format!("censor_time {} exceeds t_max {}", rule.censor_time, config.t_max)));
    }
    if paths == 0 {
        return Err(Error::OutOfRange("paths must be at least 1".into()));
    }
    let horizon = IntegratorConfig { t_max: rule.censor_time.max(config.dt), ..*config };
    let mut times = Vec::new();
    let (mut censored, mut failures) = (0, 0);
    let mut first_err = None;
    exec.for_each_ordered(
        paths,
        |p| {
            integrate_path(system, &initial.get(p as u64), &horizon, rng, p as u64, |_, t, x| {
                if t <= rule.censor_time && rule.predicate.holds(system, x) {
                    Control::Stop
                } else {
                    Control::Continue
                }
            })
        },
        |_, r| match r {
            Ok(PathEnd::Stopped { time, .. }) => times.push(time),
            Ok(PathEnd::Completed) => censored += 1,
            Ok(PathEnd::Failed(_)) => failures += 1,
            Err(e) => {
                first_err.get_or_insert(e);
            }
        },
    );
    if let Some(e) = first_err {
        return Err(e);
    }
    times.sort_by(f64::total_cmp);
    let quantiles = if times.is_empty() { Vec::new() } else { [0.1, 0.25, 0.5, 0.75, 0.9].iter().map(|&q| (q, quantile_sorted(&times, q))).collect() };
    let alive = paths - failures;
    Ok(HittingTimes {
        times,
        quantiles,
        censored,
        censored_fraction: if alive == 0 { 0.0 } else { censored as f64 / alive as f64 },
        paths,
        failures,
        valid: failure_ok(failures, paths),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviationEstimate {
    pub probability: f64,
    pub interval: (f64, f64),
    pub hits: u64,
    pub paths: usize,
    pub failures: usize,
}

/// P(sup_{t≤τ} ||x_t|² − K²| ≥ εK²) for K = |x0|, monitored at every step.
#[allow(clippy::too_many_arguments)]
pub fn energy_deviation_probability(
    system: &SdeSystem,
    x0: &[f64],
    tau: f64,
    epsilon: f64,
    paths: usize,
    dt: Option<f64>,
    rng: &RngPolicy,
    exec: &Executor,
) -> Result<DeviationEstimate> {
    let k2: f64 = x0.iter().map(|v| v * v).sum();
    if k2 < 1.0 {
        return Err(Error::OutOfRange("energy deviation needs |x0| >= 1".into()));
    }
    let dt = dt.unwrap_or_else(|| default_dt(x0)).min(tau);
    let config = IntegratorConfig::new(dt, tau)?;
    let band = epsilon * k2;
    let mut hits = 0u64;
    let mut failures = 0;
    let mut first_err = None;
    exec.for_each_ordered(
        paths,
        |p| integrate_path(system, x0, &config, rng, p as u64, |_, _, x| if (x.iter().map(|v| v * v).sum::<f64>() - k2).abs() >= band { Control::Stop } else { Control::Continue }),
        |_, r| match r {
            Ok(PathEnd::Stopped { .. }) => hits += 1,
            Ok(PathEnd::Completed) => {}
            Ok(PathEnd::Failed(_)) => failures += 1,
            Err(e) => {
                first_err.get_or_insert(e);
            }
        },
    );
    if let Some(e) = first_err {
        return Err(e);
    }
    let n = (paths - failures) as u64;
    if n == 0 {
        return Err(Error::AllPathsFailed(paths));
    }
    Ok(DeviationEstimate { probability: hits as f64 / n as f64, interval: wilson_interval(hits, n), hits, paths, failures })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::{DampingOperator, NoiseOperator};
    use crate::tensor::BilinearTensor;

    fn free(n: usize) -> SdeSystem {
        SdeSystem::new("bm", BilinearTensor::new(n, []).unwrap(), DampingOperator::diagonal(&vec![0.0; n]).unwrap(), NoiseOperator::identity(n), None).unwrap()
    }

    #[test]
    fn free_step_adds_increment() {
        let s = free(3);
        let y = step(&s, Scheme::TamedEuler, &[1.0, 2.0, 3.0], 0.1, &[0.5, -0.5, 0.25]).unwrap();
        assert_eq!(y, vec![1.5, 1.5, 3.25]);
    }

    #[test]
    fn grid_includes_final_time() {
        let c = IntegratorConfig::new(0.3, 1.0).unwrap().with_stride(2).unwrap();
        assert_eq!(c.steps(), 4);
        assert_eq!(c.grid(), vec![0.0, 0.6, 1.0]);
        assert!(IntegratorConfig::new(2.0, 1.0).is_err());
        assert!(IntegratorConfig::new(0.1, 1.0).unwrap().with_stride(0).is_err());
    }

    #[test]
    fn observable_names_round_trip() {
        for o in [Observable::Energy, Observable::Coordinate(2), Observable::AbsCoordinate(0), Observable::JapaneseBracketPower(0.25), Observable::KernelComponent] {
            assert_eq!(o.to_string().parse::<Observable>().unwrap(), o);
        }
        assert!("banana".parse::<Observable>().is_err());
    }

    #[test]
    fn path_streams_are_independent_of_order() {
        let s = free(2);
        let c = IntegratorConfig::new(0.01, 0.1).unwrap();
        let rng = RngPolicy::new(7);
        let a = simulate_path(&s, &[0.0, 0.0], &c, &rng, 3, &[Observable::Coordinate(0)]).unwrap();
        let _ = simulate_path(&s, &[0.0, 0.0], &c, &rng, 1, &[Observable::Coordinate(0)]).unwrap();
        let b = simulate_path(&s, &[0.0, 0.0], &c, &rng, 3, &[Observable::Coordinate(0)]).unwrap();
        assert_eq!(a.1, b.1);
    }

    #[test]
    fn trivial_stopping_rules() {
        let s = free(2);
        let c = IntegratorConfig::new(0.01, 0.1).unwrap();
        let ex = Executor::new(2).unwrap();
        let init = Initial::Point(vec![0.0, 0.0]);
        let always = StoppingRule { predicate: Predicate::Always, censor_time: 0.1 };
        let h = hitting_time(&s, &init, &always, &c, &RngPolicy::new(1), 10, &ex).unwrap();
        assert!(h.times.iter().all(|t| *t == 0.0) && h.censored == 0);
        let never = StoppingRule { predicate: Predicate::Never, censor_time: 0.1 };
        let h = hitting_time(&s, &init, &never, &c, &RngPolicy::new(1), 10, &ex).unwrap();
        assert_eq!(h.censored_fraction, 1.0);
        let late = StoppingRule { predicate: Predicate::Never, censor_time: 1.0 };
        assert!(hitting_time(&s, &init, &late, &c, &RngPolicy::new(1), 10, &ex).is_err());
    }
}

//! Monte Carlo checks of the mechanisms behind the existence results:
//! time-averaged dissipation near ker A, its scaling in K, exit times and the
//! local Lyapunov function of the rotated triad, sub-geometric drift and
//! long-time moment averages.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::engine::{integrate_path, Control, Executor, IntegratorConfig, PathEnd, RngPolicy, Scheme};
use crate::error::{check_dim, Error, Result};
use crate::linalg::{self, Mat, Vector};
use crate::spectral::Certificate;
use crate::stats::{linear_fit, Moments};
use crate::system::{coords, SdeSystem};

/// Relative slack when re-checking region membership of generated points.
const MEMBERSHIP_SLACK: f64 = 1e-12;
const MAX_REJECTIONS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionTag {
    All,
    /// |x₁| ≥ K/√32.
    L96B1,
    /// δ₁K^{1/7} ≤ |x₁| < K/√32.
    L96B2,
    /// |x₁| < δ₁K^{1/7}.
    L96B3,
    /// |Π_{V₂}x| ≤ δ^{1/8}K^r.
    Combined1,
    /// |Π_{V₁}x| ≤ δ^{1/8}K^r.
    Combined2,
    /// min(|Π_{V₁}x|, |Π_{V₂}x|) > δ^{1/8}K^r.
    Combined3,
}

impl FromStr for RegionTag {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "all" => RegionTag::All,
            "l96_b1" => RegionTag::L96B1,
            "l96_b2" => RegionTag::L96B2,
            "l96_b3" => RegionTag::L96B3,
            "combined_1" => RegionTag::Combined1,
            "combined_2" => RegionTag::Combined2,
            "combined_3" => RegionTag::Combined3,
            _ => return Err(Error::OutOfRange(format!("unknown region tag `{s}`"))),
        })
    }
}

impl fmt::Display for RegionTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RegionTag::All => "all",
            RegionTag::L96B1 => "l96_b1",
            RegionTag::L96B2 => "l96_b2",
            RegionTag::L96B3 => "l96_b3",
            RegionTag::Combined1 => "combined_1",
            RegionTag::Combined2 => "combined_2",
            RegionTag::Combined3 => "combined_3",
        })
    }
}

/// B_K = {|Π_⊥x|² ≤ δ|Π_ker x|^{2r}, (1−δ)K² ≤ |x|² ≤ (1+δ)K²}, optionally
/// cut to one sub-region.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionSpec {
    pub k: f64,
    pub delta: f64,
    pub r: f64,
    pub tag: RegionTag,
    /// δ₁ of the Lorenz-96 split.
    pub delta1: f64,
}

impl RegionSpec {
    pub fn new(k: f64, delta: f64, r: f64) -> Result<Self> {
        let s = RegionSpec { k, delta, r, tag: RegionTag::All, delta1: 0.2 };
        s.validate()?;
        Ok(s)
    }

    pub fn with_tag(mut self, tag: RegionTag) -> Self {
        self.tag = tag;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.k > 0.0 && self.k.is_finite()) {
            return Err(Error::OutOfRange(format!("K must be positive, got {}", self.k)));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::OutOfRange(format!("delta must be in (0,1), got {}", self.delta)));
        }
        if !(self.r > 0.0 && self.r <= 1.0) {
            return Err(Error::OutOfRange(format!("r must be in (0,1], got {}", self.r)));
        }
        if !(self.delta1 > 0.0 && self.delta1 < 1.0) {
            return Err(Error::OutOfRange(format!("delta1 must be in (0,1), got {}", self.delta1)));
        }
        Ok(())
    }

    fn l96_bounds(&self) -> (f64, f64) {
        (self.delta1 * self.k.powf(1.0 / 7.0), self.k / 32f64.sqrt())
    }

    fn combined_bound(&self) -> f64 {
        self.delta.powf(0.125) * self.k.powf(self.r)
    }
}

fn split_norms(system: &SdeSystem, z: &Vector) -> Result<(f64, f64)> {
    let s = system.decomposition.split().ok_or(Error::MissingSplit)?;
    let a = z.rows(0, s).norm();
    let b = z.rows(s, z.len() - s).norm();
    Ok((a, b))
}

/// Membership in the region, with a 1e−12 relative slack on each inequality.
pub fn region_contains(system: &SdeSystem, spec: &RegionSpec, x: &[f64]) -> Result<bool> {
    check_dim(system.dim(), x.len())?;
    let dec = &system.decomposition;
    let z = coords(dec.q_ker(), x);
    let zn = z.norm();
    let perp2 = coords(dec.q_perp(), x).norm_squared();
    let e: f64 = x.iter().map(|v| v * v).sum();
    let k2 = spec.k * spec.k;
    let up = 1.0 + MEMBERSHIP_SLACK;
    let dn = 1.0 - MEMBERSHIP_SLACK;
    // with ker A = {0} the perp condition would leave only the origin; the
    // region is then the whole shell
    let cone = dec.kernel_dim() == 0 || perp2 <= up * spec.delta * zn.powf(2.0 * spec.r);
    let core = cone && e >= dn * (1.0 - spec.delta) * k2 && e <= up * (1.0 + spec.delta) * k2;
    if !core {
        return Ok(false);
    }
    let (lo, hi) = spec.l96_bounds();
    let b = spec.combined_bound();
    Ok(match spec.tag {
        RegionTag::All => true,
        RegionTag::L96B1 => x[0].abs() >= dn * hi,
        RegionTag::L96B2 => x[0].abs() >= dn * lo && x[0].abs() < hi,
        RegionTag::L96B3 => x[0].abs() < lo,
        RegionTag::Combined1 => split_norms(system, &z)?.1 <= up * b,
        RegionTag::Combined2 => split_norms(system, &z)?.0 <= up * b,
        RegionTag::Combined3 => {
            let (a, c) = split_norms(system, &z)?;
            a.min(c) > dn * b
        }
    })
}

fn unit_gaussian(rng: &mut ChaCha8Rng, d: usize) -> Vector {
    loop {
        let g = Vector::from_fn(d, |_, _| StandardNormal.sample(&mut *rng));
        let n = g.norm();
        if n > 0.0 {
            return g / n;
        }
    }
}

/// ρ with ρ² + c·ρ^{2r} = e, by bisection.
fn solve_kernel_radius(e: f64, c: f64, r: f64) -> f64 {
    let (mut lo, mut hi) = (0.0, e.sqrt());
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid * mid + c * mid.powf(2.0 * r) > e {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    lo
}

fn kernel_direction(system: &SdeSystem, spec: &RegionSpec, rho: f64, rng: &mut ChaCha8Rng) -> Result<Option<Vector>> {
    let dec = &system.decomposition;
    let d = dec.kernel_dim();
    match spec.tag {
        RegionTag::All => Ok(Some(unit_gaussian(rng, d))),
        RegionTag::L96B1 | RegionTag::L96B2 | RegionTag::L96B3 => {
            let e1 = linalg::unit(system.dim(), 0);
            if dec.perp_norm(e1.as_slice()) > 1e-12 {
                return Err(Error::Infeasible("Lorenz-96 sub-regions need e1 in ker A".into()));
            }
            let c = coords(dec.q_ker(), e1.as_slice());
            let (lo, hi) = spec.l96_bounds();
            let (a, b) = match spec.tag {
                RegionTag::L96B1 => (hi, rho),
                RegionTag::L96B2 => (lo, hi.min(rho)),
                _ => (0.0, lo.min(rho)),
            };
            if !(b > a) && !(spec.tag == RegionTag::L96B1 && b >= a) {
                return Ok(None);
            }
            let x1 = a + (b - a) * rng.random::<f64>();
            let t = (x1 / rho).clamp(-1.0, 1.0) * if rng.random::<bool>() { 1.0 } else { -1.0 };
            if d == 1 {
                return Ok((t.abs() == 1.0).then(|| c * t.signum()));
            }
            // unit w ⟂ c inside the kernel
            let mut w = unit_gaussian(rng, d);
            w -= &c * c.dot(&w);
            let wn = w.norm();
            if wn == 0.0 {
                return Ok(None);
            }
            Ok(Some(&c * t + (w / wn) * (1.0 - t * t).max(0.0).sqrt()))
        }
        RegionTag::Combined1 | RegionTag::Combined2 | RegionTag::Combined3 => {
            let s = dec.split().ok_or(Error::MissingSplit)?;
            let b = spec.combined_bound() / rho;
            // fraction of |z| carried by V2 (tag 1) / V1 (tag 2, 3)
            let frac = match spec.tag {
                RegionTag::Combined1 | RegionTag::Combined2 => b.min(1.0) * rng.random::<f64>(),
                _ => {
                    let top = (1.0 - b * b).max(0.0).sqrt();
                    if !(top > b) {
                        return Ok(None);
                    }
                    b + (top - b) * rng.random::<f64>()
                }
            };
            let other = (1.0 - frac * frac).max(0.0).sqrt();
            let (w1, w2) = match spec.tag {
                RegionTag::Combined1 => (other, frac),
                _ => (frac, other),
            };
            let mut u = Vector::zeros(d);
            u.rows_mut(0, s).copy_from(&(unit_gaussian(rng, s) * w1));
            u.rows_mut(s, d - s).copy_from(&(unit_gaussian(rng, d - s) * w2));
            Ok(Some(u))
        }
    }
}

/// Points of the region: energy uniform in [(1−δ)K², (1+δ)K²], perp part
/// uniform in the ball of radius √δ|Π_ker x|^r, kernel direction uniform or
/// constrained by the tag. Every point is re-checked against the region.
pub fn sample_region(system: &SdeSystem, spec: &RegionSpec, count: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    spec.validate()?;
    let dec = &system.decomposition;
    let d = dec.kernel_dim();
    let m = system.dim() - d;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k2 = spec.k * spec.k;
    if d == 0 {
        if spec.tag != RegionTag::All {
            return Err(Error::Infeasible(format!("region {} needs a nontrivial kernel", spec.tag)));
        }
        return Ok((0..count)
            .map(|_| {
                let e = k2 * (1.0 - spec.delta + 2.0 * spec.delta * rng.random::<f64>());
                (unit_gaussian(&mut rng, m) * e.sqrt()).as_slice().to_vec()
            })
            .collect());
    }
    let mut out = Vec::with_capacity(count);
    let mut rejections = 0;
    while out.len() < count {
        let e = k2 * (1.0 - spec.delta + 2.0 * spec.delta * rng.random::<f64>());
        let s = if m > 0 { rng.random::<f64>().powf(1.0 / m as f64) } else { 0.0 };
        let rho = solve_kernel_radius(e, s * s * spec.delta, spec.r);
        let candidate = match kernel_direction(system, spec, rho, &mut rng)? {
            Some(u) => {
                let mut x = dec.q_ker() * (u * rho);
                if m > 0 {
                    x += dec.q_perp() * (unit_gaussian(&mut rng, m) * (s * spec.delta.sqrt() * rho.powf(spec.r)));
                }
                Some(x.as_slice().to_vec())
            }
            None => None,
        };
        match candidate {
            Some(x) if region_contains(system, spec, &x)? => out.push(x),
            _ => {
                rejections += 1;
                if rejections > MAX_REJECTIONS + 10 * count {
                    return Err(Error::Infeasible(format!("region {} at K = {} yields no points", spec.tag, spec.k)));
                }
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DissipationRow {
    pub k: f64,
    pub eta: f64,
    /// Mean over points and paths of (1/η)∫₀^η D(x_t) dt.
    pub mean: f64,
    /// Standard error from the per-point path variances.
    pub se: f64,
    pub per_point: Vec<f64>,
    pub worst: f64,
    pub worst_point: Vec<f64>,
    pub failures: usize,
    pub valid: bool,
}

/// (1/η)∫₀^η E D(x_t) dt by the trapezoid rule, for each start point.
pub fn time_averaged_dissipation(
    system: &SdeSystem,
    points: &[Vec<f64>],
    eta: f64,
    paths_per_point: usize,
    config: &IntegratorConfig,
    rng: &RngPolicy,
    exec: &Executor,
) -> Result<DissipationRow> {
    if points.is_empty() || paths_per_point == 0 {
        return Err(Error::OutOfRange("need at least one point and one path".into()));
    }
    if !(eta <= config.t_max + 1e-12 * config.t_max) {
        return Err(Error::OutOfRange(format!("eta {eta} exceeds t_max {}", config.t_max)));
    }
    let run = IntegratorConfig { t_max: eta, dt: config.dt.min(eta), ..*config };
    run.validate()?;
    let a = system.damping.matrix();
    let total = points.len() * paths_per_point;
    let mut per = vec![Moments::default(); points.len()];
    let mut failures = 0;
    let mut first_err = None;
    exec.for_each_ordered(
        total,
        |idx| {
            let x0 = &points[idx / paths_per_point];
            let mut integral = 0.0;
            let (mut tp, mut dp) = (0.0, 0.0);
            integrate_path(system, x0, &run, rng, idx as u64, |k, t, x| {
                let d = quad_form(a, x);
                if k > 0 {
                    integral += 0.5 * (t - tp) * (d + dp);
                }
                tp = t;
                dp = d;
                Control::Continue
            })
            .map(|end| (end, integral / eta))
        },
        |idx, r| match r {
            Ok((PathEnd::Completed, v)) => per[idx / paths_per_point].push(v),
            Ok(_) => failures += 1,
            Err(e) => {
                first_err.get_or_insert(e);
            }
        },
    );
    if let Some(e) = first_err {
        return Err(e);
    }
    if per.iter().any(|m| m.count == 0) {
        return Err(Error::AllPathsFailed(paths_per_point));
    }
    let per_point: Vec<f64> = per.iter().map(|m| m.mean).collect();
    let np = points.len() as f64;
    let mean = per_point.iter().sum::<f64>() / np;
    let se = per.iter().map(|m| m.variance() / m.count as f64).sum::<f64>().sqrt() / np;
    let (wi, worst) = per_point.iter().copied().enumerate().fold((0, f64::INFINITY), |b, (i, v)| if v < b.1 { (i, v) } else { b });
    Ok(DissipationRow {
        k: linalg::norm(&points[0]),
        eta,
        mean,
        se,
        per_point,
        worst,
        worst_point: points[wi].clone(),
        failures,
        valid: failures as f64 <= crate::engine::MAX_FAILURE_FRACTION * total as f64,
    })
}

fn quad_form(a: &Mat, x: &[f64]) -> f64 {
    let n = x.len();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            s += x[i] * a[(i, j)] * x[j];
        }
    }
    s.max(0.0)
}

/// Averaging time η(K).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EtaRule {
    /// prefactor·(1/2 + r)·log K/(λ_R K).
    Spectral {
        lambda_r: f64,
        prefactor: f64,
    },
    /// prefactor·K^{(2r−2)/3}.
    Jordan {
        prefactor: f64,
    },
    /// prefactor/K.
    Transverse {
        prefactor: f64,
    },
    /// prefactor·K^exponent.
    Power {
        prefactor: f64,
        exponent: f64,
    },
    Fixed(f64),
}

impl EtaRule {
    pub fn eta(&self, k: f64, r: f64) -> f64 {
        match *self {
            EtaRule::Spectral { lambda_r, prefactor } => prefactor * (0.5 + r) * k.ln() / (lambda_r * k),
            EtaRule::Jordan { prefactor } => prefactor * k.powf((2.0 * r - 2.0) / 3.0),
            EtaRule::Transverse { prefactor } => prefactor / k,
            EtaRule::Power { prefactor, exponent } => prefactor * k.powf(exponent),
            EtaRule::Fixed(v) => v,
        }
    }
}

impl FromStr for EtaRule {
    type Err = Error;
    /// `spectral:<λ_R>[:<prefactor>]`, `jordan[:<prefactor>]`,
    /// `transverse[:<prefactor>]`, `power:<exponent>[:<prefactor>]`, `fixed:<η>`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.trim().split(':').collect();
        let bad = || Error::OutOfRange(format!("bad eta rule `{s}`"));
        let num = |i: usize| -> Result<Option<f64>> { parts.get(i).map(|p| p.parse::<f64>().map_err(|_| bad())).transpose() };
        if parts.len() > 3 {
            return Err(bad());
        }
        Ok(match parts[0] {
            "spectral" => EtaRule::Spectral { lambda_r: num(1)?.ok_or_else(bad)?, prefactor: num(2)?.unwrap_or(10.0) },
            "jordan" if parts.len() <= 2 => EtaRule::Jordan { prefactor: num(1)?.unwrap_or(4.0) },
            "transverse" if parts.len() <= 2 => EtaRule::Transverse { prefactor: num(1)?.unwrap_or(1.0) },
            "power" => EtaRule::Power { exponent: num(1)?.ok_or_else(bad)?, prefactor: num(2)?.unwrap_or(1.0) },
            "fixed" if parts.len() == 2 => EtaRule::Fixed(num(1)?.ok_or_else(bad)?),
            _ => return Err(bad()),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoercivityEstimate {
    pub k_grid: Vec<f64>,
    pub r: f64,
    pub tag: RegionTag,
    pub rows: Vec<DissipationRow>,
    pub slope: f64,
    /// Slope ± 1.96 standard errors.
    pub slope_ci: (f64, f64),
    pub target: f64,
    /// min over K of mean/K^{2r}.
    pub c_star_lower: f64,
    /// max/min over K of mean/K^{2r}.
    pub c_star_spread: f64,
    /// slope ≥ 2r − 0.1.
    pub consistent: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoercivityPlan {
    pub points: usize,
    pub paths_per_point: usize,
    /// Time steps per averaging window; dt = η/steps.
    pub steps_per_eta: usize,
    pub scheme: Scheme,
}

impl Default for CoercivityPlan {
    fn default() -> Self {
        CoercivityPlan { points: 64, paths_per_point: 64, steps_per_eta: 400, scheme: Scheme::TamedEuler }
    }
}

/// Log-log regression of the time-averaged dissipation over region points
/// against K.
pub fn coercivity_exponent_fit(
    system: &SdeSystem,
    base: &RegionSpec,
    k_grid: &[f64],
    eta_rule: &EtaRule,
    plan: &CoercivityPlan,
    seed: u64,
    exec: &Executor,
) -> Result<CoercivityEstimate> {
    if k_grid.len() < 3 {
        return Err(Error::DegenerateFit("need at least 3 K values".into()));
    }
    let (kmin, kmax) = k_grid.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &k| (a.min(k), b.max(k)));
    if !(kmax / kmin >= 10.0 * (1.0 - 1e-12)) {
        return Err(Error::DegenerateFit("K grid must span at least one decade".into()));
    }
    let mut rows = Vec::new();
    for (i, &k) in k_grid.iter().enumerate() {
        let spec = RegionSpec { k, ..*base };
        let pts = sample_region(system, &spec, plan.points, seed.wrapping_add(i as u64))?;
        let eta = eta_rule.eta(k, base.r);
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(Error::OutOfRange(format!("eta({k}) = {eta} is not a positive time")));
        }
        let cfg = IntegratorConfig::new(eta / plan.steps_per_eta as f64, eta)?.with_scheme(plan.scheme);
        let rng = RngPolicy::new(seed.wrapping_add(1000 + i as u64));
        let mut row = time_averaged_dissipation(system, &pts, eta, plan.paths_per_point, &cfg, &rng, exec)?;
        row.k = k;
        if !row.valid {
            return Err(Error::AllPathsFailed(row.failures));
        }
        rows.push(row);
    }
    if rows.iter().any(|r| !(r.mean > 0.0)) {
        return Err(Error::DegenerateFit("zero dissipation estimate".into()));
    }
    let lx: Vec<f64> = rows.iter().map(|r| r.k.ln()).collect();
    let ly: Vec<f64> = rows.iter().map(|r| r.mean.ln()).collect();
    let fit = linear_fit(&lx, &ly).ok_or_else(|| Error::DegenerateFit("log-log regression failed".into()))?;
    let cs: Vec<f64> = rows.iter().map(|r| r.mean / r.k.powf(2.0 * base.r)).collect();
    let cmin = cs.iter().copied().fold(f64::INFINITY, f64::min);
    let cmax = cs.iter().copied().fold(0.0, f64::max);
    let target = 2.0 * base.r;
    Ok(CoercivityEstimate {
        k_grid: k_grid.to_vec(),
        r: base.r,
        tag: base.tag,
        rows,
        slope: fit.slope,
        slope_ci: (fit.slope - 1.96 * fit.slope_se, fit.slope + 1.96 * fit.slope_se),
        target,
        c_star_lower: cmin,
        c_star_spread: cmax / cmin,
        consistent: fit.slope >= target - 0.1,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExitRow {
    pub k: f64,
    /// C₀ log K/K.
    pub threshold: f64,
    pub median: Option<f64>,
    pub fraction_by_threshold: f64,
    pub censored_fraction: f64,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExitTimeReport {
    pub delta: f64,
    pub c0: f64,
    pub calibration_k: f64,
    pub rows: Vec<ExitRow>,
    /// Every row has at least half of its paths exiting by the threshold.
    pub passed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExitPlan {
    pub delta: f64,
    pub paths: usize,
    /// dt = dt_scale/K.
    pub dt_scale: f64,
    /// Censoring at censor_scale·log K/K.
    pub censor_scale: f64,
    /// Quantile of τK/log K at the smallest K that fixes C₀.
    pub calibration_quantile: f64,
}

impl Default for ExitPlan {
    fn default() -> Self {
        ExitPlan { delta: 0.1, paths: 400, dt_scale: 0.002, censor_scale: 20.0, calibration_quantile: 0.75 }
    }
}

/// Exit times from the north pole (0,0,K) of the rotated triad through
/// {|x₁| ≥ δK, |x₂| ≤ K^{1/4}}. C₀ is calibrated at the smallest K and held
/// fixed for the rest of the grid.
pub fn exit_time_scaling(system: &SdeSystem, k_grid: &[f64], plan: &ExitPlan, seed: u64, exec: &Executor) -> Result<ExitTimeReport> {
    if !(plan.delta > 0.0 && plan.delta < 1.0) {
        return Err(Error::OutOfRange(format!("delta must be in (0,1), got {}", plan.delta)));
    }
    if system.dim() != 3 {
        return Err(Error::DimensionMismatch { expected: 3, got: system.dim() });
    }
    if k_grid.is_empty() || k_grid.iter().any(|k| !(*k > 1.0)) {
        return Err(Error::OutOfRange("exit times need K > 1".into()));
    }
    let mut samples = Vec::new();
    for (i, &k) in k_grid.iter().enumerate() {
        let dt = plan.dt_scale / k;
        let horizon = plan.censor_scale * k.ln() / k;
        let cfg = IntegratorConfig::new(dt.min(horizon), horizon)?;
        let rng = RngPolicy::new(seed.wrapping_add(i as u64));
        let (a, b) = (plan.delta * k, k.powf(0.25));
        let ends = exec.map(plan.paths, |p| {
            integrate_path(system, &[0.0, 0.0, k], &cfg, &rng, p as u64, |_, _, x| if x[0].abs() >= a && x[1].abs() <= b { Control::Stop } else { Control::Continue })
        });
        let mut times = Vec::new();
        let (mut censored, mut failures) = (0, 0);
        for e in ends {
            match e? {
                PathEnd::Stopped { time, .. } => times.push(time),
                PathEnd::Completed => censored += 1,
                PathEnd::Failed(_) => failures += 1,
            }
        }
        times.sort_by(f64::total_cmp);
        samples.push((k, times, censored, failures));
    }
    let (k0, t0, c0n, _) = &samples[0];
    let scaled: Vec<f64> = t0.iter().map(|t| t * k0 / k0.ln()).collect();
    let c0 = censored_quantile(&scaled, t0.len() + c0n, plan.calibration_quantile).unwrap_or(f64::INFINITY);
    let mut rows = Vec::new();
    for (k, times, censored, failures) in &samples {
        let threshold = c0 * k.ln() / k;
        let alive = times.len() + censored;
        let frac = if alive == 0 { 0.0 } else { times.partition_point(|t| *t <= threshold) as f64 / alive as f64 };
        let median = censored_quantile(times, alive, 0.5);
        rows.push(ExitRow {
            k: *k,
            threshold,
            median,
            fraction_by_threshold: frac,
            censored_fraction: if alive == 0 { 1.0 } else { *censored as f64 / alive as f64 },
            failures: *failures,
        });
    }
    let passed = c0.is_finite() && rows.iter().all(|r| r.fraction_by_threshold >= 0.5);
    Ok(ExitTimeReport { delta: plan.delta, c0, calibration_k: *k0, rows, passed })
}

/// Quantile of `total` samples of which only the ascending `observed` ones are
/// finite (the rest censored at +∞); None when it lands on a censored value.
fn censored_quantile(observed: &[f64], total: usize, q: f64) -> Option<f64> {
    if total == 0 {
        return None;
    }
    let h = q * (total - 1) as f64;
    let (lo, hi) = (h.floor() as usize, h.ceil() as usize);
    if hi >= observed.len() {
        return None;
    }
    Some(observed[lo] + (h - lo as f64) * (observed[hi] - observed[lo]))
}

/// V_K of the rotated triad near the north pole.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalLyapunov {
    pub k: f64,
    pub r: f64,
    pub gamma: f64,
}

impl LocalLyapunov {
    /// R = 128 and γ = min(1/8, Λ₁₁/(64R²), 1/(1 + 2/R)): the drift constant
    /// from the construction, capped so the pointwise bounds hold.
    pub fn new(k: f64, lambda11: f64) -> Self {
        let r = 128.0;
        LocalLyapunov { k, r, gamma: (0.125f64).min(lambda11 / (64.0 * r * r)).min(1.0 / (1.0 + 2.0 / r)) }
    }

    /// 𝓑_K = {K/2 ≤ x₃ ≤ 2K, |x₁| ≤ K, |x₂| ≤ K^{1/4}}.
    pub fn in_domain(&self, x: &[f64]) -> bool {
        x[2] >= self.k / 2.0 && x[2] <= 2.0 * self.k && x[0].abs() <= self.k && x[1].abs() <= self.k.powf(0.25)
    }
}

/// C² smoothstep cutoff: 1 on [0, 1/2], 0 on [1, ∞), non-increasing.
pub fn cutoff(y: f64) -> f64 {
    if y <= 0.5 {
        1.0
    } else if y >= 1.0 {
        0.0
    } else {
        let s = 2.0 * (y - 0.5);
        1.0 - s * s * s * (10.0 - 15.0 * s + 6.0 * s * s)
    }
}

/// V_K = χ_T(x₁)/|x₁| + √K(1 − (K/32)x₁²/R²)χ_D(x₁) with
/// χ_D = φ(√K|x₁|/(4R)), χ_T = 1 − φ(√K|x₁|/R).
pub fn local_lyapunov_eval(x: &[f64], v: &LocalLyapunov) -> f64 {
    let a = x[0].abs();
    let sk = v.k.sqrt();
    let chi_d = cutoff(sk * a / (4.0 * v.r));
    let chi_t = 1.0 - cutoff(sk * a / v.r);
    let transport = if chi_t > 0.0 { chi_t / a } else { 0.0 };
    transport + sk * (1.0 - v.k / 32.0 * a * a / (v.r * v.r)) * chi_d
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeneratorEstimate {
    pub estimate: f64,
    pub se: f64,
    pub h: f64,
    pub failures: usize,
}

/// (E f(x_h) − f(x))/h by Monte Carlo; h defaults to 0.01/(1+|x|) and the
/// bias is O(h).
#[allow(clippy::too_many_arguments)]
pub fn generator_action_estimate(
    system: &SdeSystem,
    f: &(dyn Fn(&[f64]) -> f64 + Sync),
    x: &[f64],
    h: Option<f64>,
    substeps: usize,
    paths: usize,
    rng: &RngPolicy,
    exec: &Executor,
) -> Result<GeneratorEstimate> {
    check_dim(system.dim(), x.len())?;
    if paths < 2 {
        return Err(Error::OutOfRange("generator estimate needs at least 2 paths".into()));
    }
    let h = h.unwrap_or(0.01 / (1.0 + linalg::norm(x)));
    let cfg = IntegratorConfig::new(h / substeps.max(1) as f64, h)?;
    let f0 = f(x);
    let mut m = Moments::default();
    let mut failures = 0;
    let mut first_err = None;
    exec.for_each_ordered(
        paths,
        |p| {
            let mut last = f64::NAN;
            integrate_path(system, x, &cfg, rng, p as u64, |k, _, y| {
                if k == cfg.steps() {
                    last = f(y);
                }
                Control::Continue
            })
            .map(|e| (e, last))
        },
        |_, r| match r {
            Ok((PathEnd::Completed, v)) => m.push((v - f0) / h),
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
    Ok(GeneratorEstimate { estimate: m.mean, se: m.std_error(), h, failures })
}

/// Points of 𝓑_K with |x₁| log-uniform in [1/K, K] (random sign), x₂ uniform
/// in [−K^{1/4}, K^{1/4}] and x₃ uniform in [K/2, 2K], so that every regime
/// of V_K is visited.
pub fn sample_local_domain(v: &LocalLyapunov, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lk = v.k.ln();
    (0..count)
        .map(|_| {
            let a = (lk * (2.0 * rng.random::<f64>() - 1.0)).exp().min(v.k);
            let x1 = if rng.random::<bool>() { a } else { -a };
            let x2 = (2.0 * rng.random::<f64>() - 1.0) * v.k.powf(0.25);
            let x3 = v.k * (0.5 + 1.5 * rng.random::<f64>());
            vec![x1, x2, x3]
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LyapunovRow {
    pub point: Vec<f64>,
    pub value: f64,
    pub generator: GeneratorEstimate,
    /// generator + 1.96 SE.
    pub upper: f64,
    /// −𝓛V_K/(K V_K), the empirical decay constant.
    pub rate: f64,
    pub negative: bool,
    pub bounds_ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LyapunovReport {
    pub k: f64,
    pub r: f64,
    pub gamma: f64,
    pub rows: Vec<LyapunovRow>,
    /// Smallest observed decay constant.
    pub min_rate: f64,
    pub passed: bool,
}

/// 𝓛V_K < 0 with 95% confidence and γ/K ≤ V_K ≤ √K/γ at sampled points of
/// 𝓑_K, for the rotated triad. γ uses Λ₁₁ = (σσᵀ)₁₁.
pub fn local_lyapunov_drift_check(system: &SdeSystem, k: f64, points: usize, paths: usize, seed: u64, exec: &Executor) -> Result<LyapunovReport> {
    if system.dim() != 3 {
        return Err(Error::DimensionMismatch { expected: 3, got: system.dim() });
    }
    if !(k > 1.0 && k.is_finite()) || points == 0 {
        return Err(Error::OutOfRange("need K > 1 and at least one point".into()));
    }
    let v = LocalLyapunov::new(k, system.noise.covariance()[(0, 0)]);
    let f = |y: &[f64]| local_lyapunov_eval(y, &v);
    let mut rows = Vec::new();
    for (i, x) in sample_local_domain(&v, points, seed).into_iter().enumerate() {
        let policy = RngPolicy::new(seed.wrapping_add(1 + i as u64));
        let g = generator_action_estimate(system, &f, &x, None, 10, paths, &policy, exec)?;
        let value = f(&x);
        let upper = g.estimate + 1.96 * g.se;
        rows.push(LyapunovRow {
            bounds_ok: v.in_domain(&x) && value >= v.gamma / k && value <= k.sqrt() / v.gamma,
            point: x,
            value,
            upper,
            rate: -g.estimate / (k * value),
            negative: upper < 0.0,
            generator: g,
        });
    }
    let min_rate = rows.iter().map(|r| r.rate).fold(f64::INFINITY, f64::min);
    let passed = rows.iter().all(|r| r.negative && r.bounds_ok);
    Ok(LyapunovReport { k, r: v.r, gamma: v.gamma, rows, min_rate, passed })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftRow {
    pub state: Vec<f64>,
    pub norm: f64,
    /// Ṽ(x) = (1/T)∫₀ᵀ E V^p(x_t) dt.
    pub v_tilde: f64,
    /// 𝓛Ṽ(x) = (E V^p(x_T) − V^p(x))/T.
    pub generator: f64,
    pub generator_se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NestedCheck {
    pub state: Vec<f64>,
    pub semigroup: f64,
    pub nested: f64,
    pub nested_se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgeometricReport {
    pub r: f64,
    pub p: f64,
    pub t: f64,
    pub rows: Vec<DriftRow>,
    pub alpha: f64,
    pub beta: f64,
    /// min over states of Ṽ/⟨x⟩^{2p}.
    pub c_lower: f64,
    pub nested: Option<NestedCheck>,
    pub passed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftPlan {
    pub r: f64,
    pub p: f64,
    pub t: f64,
    pub k_max: f64,
    /// Number of large states, log-spaced in |x| over [1, K_max].
    pub states: usize,
    pub paths: usize,
    pub steps: usize,
    /// Inner × outer paths of the nested cross-check; 0 skips it.
    pub nested_inner: usize,
    pub nested_outer: usize,
    pub budget: usize,
}

impl Default for DriftPlan {
    fn default() -> Self {
        DriftPlan { r: 0.1, p: 1.0, t: 0.5, k_max: 1e3, states: 12, paths: 1000, steps: 2000, nested_inner: 0, nested_outer: 0, budget: 100_000 }
    }
}

fn bracket_pow(x: &[f64], p: f64) -> f64 {
    (1.0 + x.iter().map(|v| v * v).sum::<f64>()).powf(p)
}

/// L Ṽ ≤ −αṼ^r + β for Ṽ = (1/T)∫₀ᵀ 𝒫_t V^p dt, V = ⟨x⟩². The generator of Ṽ
/// is evaluated through the semigroup identity 𝓛Ṽ = (𝒫_T V^p − V^p)/T, β is
/// the largest upper confidence bound at |x| ≤ 1, and α is the smallest
/// margin (β − 𝓛Ṽ − 1.96 SE)/Ṽ^r over the larger states.
pub fn subgeometric_drift_check(system: &SdeSystem, plan: &DriftPlan, seed: u64, exec: &Executor) -> Result<SubgeometricReport> {
    if !(plan.r > 0.0 && plan.r <= 1.0) {
        return Err(Error::OutOfRange("r must be in (0,1]".into()));
    }
    if !(plan.p >= 1.0 && (plan.r == 1.0 || plan.p < 1.0 / (1.0 - plan.r))) {
        return Err(Error::OutOfRange(format!("need 1 <= p < 1/(1-r), got p = {}", plan.p)));
    }
    if !(plan.t > 0.0 && plan.t < 2.0) {
        return Err(Error::OutOfRange("T must be in (0,2)".into()));
    }
    if plan.nested_inner * plan.nested_outer > plan.budget {
        return Err(Error::Budget(format!("nested cross-check needs {} paths, budget {}", plan.nested_inner * plan.nested_outer, plan.budget)));
    }
    let n = system.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut states: Vec<Vec<f64>> = [0.0, 0.5, 1.0].iter().map(|&s| (unit_gaussian(&mut rng, n) * s).as_slice().to_vec()).collect();
    let kernel = system.decomposition.q_ker();
    for (i, rad) in crate::stats::log_space(1.0, plan.k_max.max(1.0), plan.states.max(2)).into_iter().enumerate() {
        // alternate kernel directions (where dissipation is weakest) and generic ones
        let dir = if i % 2 == 0 && kernel.ncols() > 0 { kernel * unit_gaussian(&mut rng, kernel.ncols()) } else { unit_gaussian(&mut rng, n) };
        states.push((dir * rad).as_slice().to_vec());
    }
    let policy = RngPolicy::new(seed);
    let mut rows = Vec::new();
    for (si, x) in states.iter().enumerate() {
        let (vt, gen, se) = semigroup_estimates(system, x, plan, &policy, (si * plan.paths) as u64, exec)?;
        rows.push(DriftRow { state: x.clone(), norm: linalg::norm(x), v_tilde: vt, generator: gen, generator_se: se });
    }
    let beta = rows.iter().filter(|r| r.norm <= 1.0).map(|r| r.generator + 1.96 * r.generator_se).fold(0.0, f64::max);
    let alpha = rows.iter().filter(|r| r.norm > 1.0).map(|r| (beta - r.generator - 1.96 * r.generator_se) / r.v_tilde.powf(plan.r)).fold(f64::INFINITY, f64::min);
    let c_lower = rows.iter().map(|r| r.v_tilde / bracket_pow(&r.state, plan.p)).fold(f64::INFINITY, f64::min);
    let nested = if plan.nested_inner > 0 && plan.nested_outer > 0 { Some(nested_check(system, &states[states.len() / 2], plan, seed, exec)?) } else { None };
    Ok(SubgeometricReport { r: plan.r, p: plan.p, t: plan.t, rows, alpha, beta, c_lower, nested, passed: alpha > 0.0 })
}

fn drift_config(x: &[f64], plan: &DriftPlan, horizon: f64) -> Result<IntegratorConfig> {
    let dt = (horizon / plan.steps.max(1) as f64).min(crate::engine::default_dt(x));
    IntegratorConfig::new(dt.min(horizon), horizon)
}

/// (Ṽ(x), 𝓛Ṽ(x), SE of 𝓛Ṽ) from one ensemble on [0, T].
fn semigroup_estimates(system: &SdeSystem, x: &[f64], plan: &DriftPlan, rng: &RngPolicy, offset: u64, exec: &Executor) -> Result<(f64, f64, f64)> {
    let cfg = drift_config(x, plan, plan.t)?;
    let v0 = bracket_pow(x, plan.p);
    let mut vt = Moments::default();
    let mut gen = Moments::default();
    let mut first_err = None;
    exec.for_each_ordered(
        plan.paths,
        |i| {
            let mut integral = 0.0;
            let (mut tp, mut vp) = (0.0, v0);
            let mut last = v0;
            integrate_path(system, x, &cfg, rng, offset + i as u64, |k, t, y| {
                let v = bracket_pow(y, plan.p);
                if k > 0 {
                    integral += 0.5 * (t - tp) * (v + vp);
                }
                tp = t;
                vp = v;
                last = v;
                Control::Continue
            })
            .map(|e| (e, integral / plan.t, last))
        },
        |_, r| match r {
            Ok((PathEnd::Completed, a, b)) => {
                vt.push(a);
                gen.push((b - v0) / plan.t);
            }
            Ok(_) => {}
            Err(e) => {
                first_err.get_or_insert(e);
            }
        },
    );
    if let Some(e) = first_err {
        return Err(e);
    }
    if gen.count == 0 {
        return Err(Error::AllPathsFailed(plan.paths));
    }
    Ok((vt.mean, gen.mean, gen.std_error()))
}

/// (E Ṽ(x_h) − Ṽ(x))/h with Ṽ itself estimated by inner ensembles.
fn nested_check(system: &SdeSystem, x: &[f64], plan: &DriftPlan, seed: u64, exec: &Executor) -> Result<NestedCheck> {
    let inner = DriftPlan { paths: plan.nested_inner, ..*plan };
    let h = 0.01 / (1.0 + linalg::norm(x));
    let outer_cfg = drift_config(x, plan, h)?;
    let outer_rng = RngPolicy::new(seed ^ 0x6e65_7374);
    let inner_rng = RngPolicy::new(seed ^ 0x696e_6e72);
    let (v0, semigroup, _) = semigroup_estimates(system, x, &inner, &inner_rng, 0, exec)?;
    let mut m = Moments::default();
    for o in 0..plan.nested_outer {
        let mut end = x.to_vec();
        integrate_path(system, x, &outer_cfg, &outer_rng, o as u64, |k, _, y| {
            if k == outer_cfg.steps() {
                end = y.to_vec();
            }
            Control::Continue
        })?;
        let (v, _, _) = semigroup_estimates(system, &end, &inner, &inner_rng, ((o + 1) * plan.nested_inner) as u64, exec)?;
        m.push((v - v0) / h);
    }
    Ok(NestedCheck { state: x.to_vec(), semigroup, nested: m.mean, nested_se: m.std_error() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentRow {
    pub p: f64,
    /// Average of ⟨x_t⟩^p over [burn_in, T] and paths.
    pub full: f64,
    pub full_se: f64,
    /// Same over [(burn_in + T)/2, T].
    pub second_half: f64,
    /// |second_half − full|/full.
    pub ratio: f64,
    pub stable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationaryEstimate {
    pub burn_in: f64,
    pub t: f64,
    pub rows: Vec<MomentRow>,
    pub paths: usize,
    pub failures: usize,
}

/// Time-and-ensemble averages of ⟨x_t⟩^p after burn-in, with the split-half
/// stabilization ratio (stable iff ≤ 0.1). With a certificate, every p must
/// lie in its moment range.
#[allow(clippy::too_many_arguments)]
pub fn stationary_moments(
    system: &SdeSystem,
    x0: &[f64],
    config: &IntegratorConfig,
    burn_in: f64,
    p_list: &[f64],
    paths: usize,
    certificate: Option<&Certificate>,
    rng: &RngPolicy,
    exec: &Executor,
) -> Result<StationaryEstimate> {
    if !(burn_in >= 0.0 && burn_in < config.t_max) {
        return Err(Error::OutOfRange("need 0 <= burn_in < T".into()));
    }
    if p_list.is_empty() || paths == 0 {
        return Err(Error::OutOfRange("need at least one moment order and one path".into()));
    }
    if let Some(c) = certificate {
        if let Some(p) = p_list.iter().find(|p| !c.moment_range.contains(**p)) {
            return Err(Error::OutOfRange(format!("p = {p} is outside the certified moment range")));
        }
    }
    let t_end = config.t_max;
    let mid = 0.5 * (burn_in + t_end);
    let np = p_list.len();
    let mut full = vec![Moments::default(); np];
    let mut half = vec![Moments::default(); np];
    let mut failures = 0;
    let mut first_err = None;
    exec.for_each_ordered(
        paths,
        |i| {
            let mut acc_full = vec![0.0; np];
            let mut acc_half = vec![0.0; np];
            let mut prev: Option<(f64, Vec<f64>)> = None;
            let end = integrate_path(system, x0, config, rng, i as u64, |_, t, y| {
                if t >= burn_in {
                    let e = 1.0 + y.iter().map(|v| v * v).sum::<f64>();
                    let vals: Vec<f64> = p_list.iter().map(|p| e.powf(p / 2.0)).collect();
                    if let Some((tp, vp)) = &prev {
                        for j in 0..np {
                            let area = 0.5 * (t - tp) * (vals[j] + vp[j]);
                            acc_full[j] += area;
                            if *tp >= mid {
                                acc_half[j] += area;
                            }
                        }
                    }
                    prev = Some((t, vals));
                }
                Control::Continue
            });
            end.map(|e| (e, acc_full, acc_half))
        },
        |_, r| match r {
            Ok((PathEnd::Completed, f, h)) => {
                let t0 = burn_in_grid_start(config, burn_in);
                let t_half = burn_in_grid_start(config, mid);
                for j in 0..np {
                    full[j].push(f[j] / (t_end - t0));
                    half[j].push(h[j] / (t_end - t_half));
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
    if full[0].count == 0 {
        return Err(Error::AllPathsFailed(paths));
    }
    let rows = p_list
        .iter()
        .enumerate()
        .map(|(j, &p)| {
            let ratio = (half[j].mean - full[j].mean).abs() / full[j].mean;
            MomentRow { p, full: full[j].mean, full_se: full[j].std_error(), second_half: half[j].mean, ratio, stable: ratio <= 0.1 }
        })
        .collect();
    Ok(StationaryEstimate { burn_in, t: t_end, rows, paths, failures })
}

/// First recorded grid time at or after `t`.
fn burn_in_grid_start(config: &IntegratorConfig, t: f64) -> f64 {
    config.grid().into_iter().find(|s| *s >= t).unwrap_or(config.t_max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::zoo::{ModelSpec, Variant};

    #[test]
    fn cutoff_is_monotone_and_pinned() {
        assert_eq!(cutoff(0.2), 1.0);
        assert_eq!(cutoff(1.3), 0.0);
        let mut prev = 1.0;
        for i in 0..=100 {
            let v = cutoff(0.5 + 0.005 * i as f64);
            assert!(v <= prev + 1e-15);
            prev = v;
        }
    }

    #[test]
    fn lyapunov_regimes() {
        let v = LocalLyapunov::new(1e4, 1.0);
        // χ_T = 1 and χ_D = 0 once |x₁| ≥ 4R/√K
        let x1 = 8.0 * v.r / v.k.sqrt();
        assert!((local_lyapunov_eval(&[x1, 0.0, v.k], &v) - 1.0 / x1).abs() < 1e-12);
        assert_eq!(local_lyapunov_eval(&[0.0, 0.0, v.k], &v), v.k.sqrt());
    }

    #[test]
    fn sampled_points_are_members() {
        let s = ModelSpec::new(Variant::Triad).with("kernel", "e3").build().unwrap();
        let spec = RegionSpec::new(100.0, 0.05, 1.0 / 7.0).unwrap();
        let pts = sample_region(&s, &spec, 50, 3).unwrap();
        assert_eq!(pts.len(), 50);
        for p in &pts {
            assert!(region_contains(&s, &spec, p).unwrap());
        }
    }

    #[test]
    fn region_spec_is_validated() {
        assert!(RegionSpec::new(10.0, 1.0, 0.5).is_err());
        assert!(RegionSpec::new(10.0, 0.5, 0.0).is_err());
        assert!(RegionSpec::new(-1.0, 0.5, 0.5).is_err());
    }

    #[test]
    fn eta_rules_parse() {
        assert_eq!("transverse".parse::<EtaRule>().unwrap(), EtaRule::Transverse { prefactor: 1.0 });
        assert_eq!("power:-0.5:2".parse::<EtaRule>().unwrap(), EtaRule::Power { exponent: -0.5, prefactor: 2.0 });
        assert!("spectral".parse::<EtaRule>().is_err());
        let j = EtaRule::Jordan { prefactor: 4.0 };
        assert!((j.eta(1e3, 0.5) - 4.0 * 1e3f64.powf(-1.0 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn exit_rejects_large_delta() {
        let s = ModelSpec::new(Variant::TriadRotated).build().unwrap();
        let plan = ExitPlan { delta: 1.0, ..ExitPlan::default() };
        assert!(exit_time_scaling(&s, &[50.0], &plan, 0, &Executor::new(1).unwrap()).is_err());
    }
}

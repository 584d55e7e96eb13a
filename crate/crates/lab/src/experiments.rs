//! One function per experiment kind. Each returns its report files in memory
//! plus named verdicts; nothing here touches the filesystem except reading a
//! `system` file.

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use quadsde_core::coercivity::{self, CoercivityPlan, DriftPlan, EtaRule, ExitPlan, RegionSpec, RegionTag};
use quadsde_core::engine::{self, Executor, Initial, IntegratorConfig, RngPolicy, Scheme};
use quadsde_core::io::system_from_text;
use quadsde_core::spectral::{self, CertifyOptions, Theorem};
use quadsde_core::system::{cancellation_check, combined_cancellation_check};
use quadsde_core::tensor::{energy_residual_certificate, sampled_conservation_check, Check};
use quadsde_core::zoo::{ModelSpec, Variant};
use quadsde_core::SdeSystem;

use crate::config::{ExperimentConfig, Kind};
use crate::error::LabError;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Verdict {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Verdict {
    fn new(name: &str, passed: bool, detail: impl Into<String>) -> Self {
        Verdict { name: name.to_string(), passed, detail: detail.into() }
    }
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub kind: Kind,
    /// (file name, contents), in write order.
    pub files: Vec<(String, Vec<u8>)>,
    pub verdicts: Vec<Verdict>,
}

impl Outcome {
    pub fn passed(&self) -> bool {
        self.verdicts.iter().all(|v| v.passed)
    }
}

/// Header shared by every JSON report.
#[derive(Serialize)]
struct Report<'a, T: Serialize> {
    kind: &'a str,
    system: &'a str,
    meta: &'a std::collections::BTreeMap<String, String>,
    seed: u64,
    verdicts: &'a [Verdict],
    result: T,
}

fn json<T: Serialize>(kind: Kind, system: &SdeSystem, seed: u64, verdicts: &[Verdict], result: T) -> Vec<u8> {
    let r = Report { kind: kind.as_str(), system: &system.name, meta: &system.meta, seed, verdicts, result };
    let mut s = serde_json::to_string_pretty(&r).expect("reports serialize");
    s.push('\n');
    s.into_bytes()
}

pub fn load_system(cfg: &ExperimentConfig) -> Result<SdeSystem, LabError> {
    let params = cfg.model_params();
    match (cfg.raw("model"), cfg.raw("system")) {
        (Some(_), Some(_)) => Err(cfg.bad("system", "set either `model` or `system`, not both")),
        (None, None) => Err(LabError::config(0, Some("model"), "missing; name a zoo model or a `system` file")),
        (None, Some(path)) => {
            if !params.is_empty() {
                return Err(cfg.bad("system", "model parameters apply to zoo models only"));
            }
            let text = std::fs::read_to_string(Path::new(path)).map_err(|e| LabError::io(path, e))?;
            Ok(system_from_text(&text)?)
        }
        (Some(name), None) => {
            let variant: Variant = name.parse().map_err(|e: quadsde_core::Error| cfg.bad("model", e.to_string()))?;
            let spec = params.into_iter().fold(ModelSpec::new(variant), |s, (k, v)| s.with(&k, v));
            Ok(spec.build()?)
        }
    }
}

fn x0(cfg: &ExperimentConfig, system: &SdeSystem) -> Result<Option<Vec<f64>>, LabError> {
    let Some(x) = cfg.list("x0")? else { return Ok(None) };
    if x.len() != system.dim() {
        return Err(cfg.bad("x0", format!("has {} entries, system dimension is {}", x.len(), system.dim())));
    }
    Ok(Some(x))
}

fn kernel_point(system: &SdeSystem) -> Option<Vec<f64>> {
    let q = system.decomposition.q_ker();
    (q.ncols() > 0).then(|| q.column(0).iter().copied().collect())
}

fn positive<T: PartialOrd + Default + Copy>(cfg: &ExperimentConfig, key: &str, v: T) -> Result<T, LabError> {
    if v > T::default() {
        Ok(v)
    } else {
        Err(cfg.bad(key, "must be positive"))
    }
}

fn scheme(cfg: &ExperimentConfig) -> Result<Scheme, LabError> {
    match cfg.raw("scheme") {
        None => Ok(Scheme::TamedEuler),
        Some(s) => s.parse().map_err(|e: quadsde_core::Error| cfg.bad("scheme", e.to_string())),
    }
}

fn k_grid(cfg: &ExperimentConfig, default: &[f64]) -> Result<Vec<f64>, LabError> {
    let g = cfg.list("K_grid")?.unwrap_or_else(|| default.to_vec());
    if g.is_empty() || g.iter().any(|k| !(*k > 0.0 && k.is_finite())) {
        return Err(cfg.bad("K_grid", "needs positive finite values"));
    }
    Ok(g)
}

fn num(v: f64) -> String {
    format!("{v:?}")
}

fn check_row(csv: &mut String, name: &str, c: &Check) {
    writeln!(csv, "{name},{},{},{}", c.passed, num(c.max_residual), num(c.tolerance)).unwrap();
}

/// Runs the configured experiment.
pub fn execute(cfg: &ExperimentConfig, exec: &Executor) -> Result<Outcome, LabError> {
    let kind = cfg.kind()?.ok_or_else(|| LabError::config(0, Some("kind"), "missing"))?;
    let seed = cfg.seed()?;
    let system = load_system(cfg)?;
    let mut verdicts = Vec::new();
    let mut files = Vec::new();
    let name = kind.as_str();
    match kind {
        Kind::Check => {
            let samples = positive(cfg, "samples", cfg.get_or("samples", 10_000usize)?)?;
            let energy = energy_residual_certificate(&system.tensor);
            let pointwise = sampled_conservation_check(&system.tensor, samples, seed);
            let equilibria = spectral::kernel_equilibrium_check(&system, 256, seed);
            let cancel = cancellation_check(&system);
            let combined = combined_cancellation_check(&system).ok();
            verdicts.push(Verdict::new("energy_residual", energy.passed, format!("max monomial coefficient {:e}", energy.max_residual)));
            verdicts.push(Verdict::new("pointwise_conservation", pointwise.passed, format!("max |x·B(x,x)|/|x|³ {:e} over {samples} points", pointwise.max_residual)));
            let mut csv = String::from("check,passed,max_residual,tolerance\n");
            check_row(&mut csv, "energy_residual", &energy);
            check_row(&mut csv, "pointwise_conservation", &pointwise);
            check_row(&mut csv, "kernel_equilibria", &equilibria);
            check_row(&mut csv, "cancellation", &cancel);
            if let Some(c) = &combined {
                check_row(&mut csv, "combined_cancellation", c);
            }
            #[derive(Serialize)]
            struct Checks {
                energy_residual: Check,
                pointwise_conservation: Check,
                kernel_equilibria: Check,
                cancellation: Check,
                combined_cancellation: Option<Check>,
            }
            let body = Checks { energy_residual: energy, pointwise_conservation: pointwise, kernel_equilibria: equilibria, cancellation: cancel, combined_cancellation: combined };
            files.push((format!("{name}.json"), json(kind, &system, seed, &verdicts, body)));
            files.push((format!("{name}.csv"), csv.into_bytes()));
        }
        Kind::Spectrum => {
            let x = match x0(cfg, &system)? {
                Some(x) => x,
                None => kernel_point(&system).ok_or_else(|| LabError::config(0, Some("x0"), "missing and ker A is trivial"))?,
            };
            let rep = spectral::classify_point(&system, &x)?;
            verdicts.push(Verdict::new("classified", true, format!("{:?}, max Re λ = {:e}", rep.class, rep.lambda_r_max)));
            let mut csv = String::from("re,im\n");
            for [re, im] in &rep.eigenvalues {
                writeln!(csv, "{},{}", num(*re), num(*im)).unwrap();
            }
            files.push((format!("{name}.json"), json(kind, &system, seed, &verdicts, &rep)));
            files.push((format!("{name}.csv"), csv.into_bytes()));
        }
        Kind::Certify => {
            let opts = CertifyOptions { samples: positive(cfg, "samples", cfg.get_or("samples", 256usize)?)?, seed, j_max: cfg.get_or("j_max", 4usize)? };
            let cert = spectral::certify(&system, &opts)?;
            let label = serde_json::to_value(cert.theorem_matched).expect("theorem serializes");
            verdicts.push(Verdict::new("theorem_matched", cert.theorem_matched != Theorem::None, label.as_str().unwrap_or("?")));
            let mut csv = String::from("evidence,passed,value,detail\n");
            for e in &cert.evidence {
                writeln!(csv, "{},{},{},\"{}\"", e.name, e.passed, e.value.map(num).unwrap_or_default(), e.detail.replace('"', "'")).unwrap();
            }
            files.push((format!("{name}.json"), json(kind, &system, seed, &verdicts, &cert)));
            files.push((format!("{name}.csv"), csv.into_bytes()));
        }
        Kind::Simulate => {
            let x = x0(cfg, &system)?.ok_or_else(|| LabError::config(0, Some("x0"), "missing"))?;
            let t_max = positive(cfg, "t_max", cfg.get_or("t_max", 1.0f64)?)?;
            let dt = positive(cfg, "dt", cfg.get_or("dt", engine::default_dt(&x))?)?;
            let config = IntegratorConfig::new(dt.min(t_max), t_max)?.with_scheme(scheme(cfg)?).with_stride(cfg.get_or("stride", 1usize)?)?;
            let obs = engine::parse_observables(cfg.raw("observables").unwrap_or("energy,dissipation")).map_err(|e| cfg.bad("observables", e.to_string()))?;
            let paths = positive(cfg, "paths", cfg.get_or("paths", 1000usize)?)?;
            let stats = engine::simulate_ensemble(&system, &Initial::Point(x), &config, &RngPolicy::new(seed), &obs, paths, exec)?;
            verdicts.push(Verdict::new("ensemble_valid", stats.valid, format!("{} of {paths} paths failed", stats.failures)));
            let mut csv = String::from("t");
            for o in &stats.observables {
                write!(csv, ",{o}_mean,{o}_se").unwrap();
            }
            csv.push('\n');
            for (gi, t) in stats.grid.iter().enumerate() {
                csv.push_str(&num(*t));
                for oi in 0..stats.observables.len() {
                    write!(csv, ",{},{}", num(stats.means[oi][gi]), num(stats.ses[oi][gi])).unwrap();
                }
                csv.push('\n');
            }
            files.push((format!("{name}.json"), json(kind, &system, seed, &verdicts, &stats)));
            files.push((format!("{name}.csv"), csv.into_bytes()));
        }
        Kind::Coercivity => {
            let r: f64 = cfg.get("r")?.ok_or_else(|| LabError::config(0, Some("r"), "missing"))?;
            let mut base = RegionSpec::new(1.0, cfg.get_or("delta", 0.05)?, r).map_err(|e| cfg.bad("r", e.to_string()))?;
            base.delta1 = cfg.get_or("delta1", base.delta1)?;
            base.tag = match cfg.raw("tag") {
                None => RegionTag::All,
                Some(t) => t.parse().map_err(|e: quadsde_core::Error| cfg.bad("tag", e.to_string()))?,
            };
            base.validate().map_err(|e| cfg.bad("delta", e.to_string()))?;
            let rule: EtaRule = cfg.raw("eta_rule").unwrap_or("transverse").parse().map_err(|e: quadsde_core::Error| cfg.bad("eta_rule", e.to_string()))?;
            let defaults = CoercivityPlan::default();
            let plan = CoercivityPlan {
                points: positive(cfg, "points", cfg.get_or("points", defaults.points)?)?,
                paths_per_point: positive(cfg, "paths", cfg.get_or("paths", defaults.paths_per_point)?)?,
                steps_per_eta: positive(cfg, "steps_per_eta", cfg.get_or("steps_per_eta", defaults.steps_per_eta)?)?,
                scheme: scheme(cfg)?,
            };
            let grid = k_grid(cfg, &[100.0, 1000.0, 10000.0])?;
            let est = coercivity::coercivity_exponent_fit(&system, &base, &grid, &rule, &plan, seed, exec)?;
            verdicts.push(Verdict::new("slope_consistent", est.consistent, format!("slope {:.4} vs target {:.4} (one-sided, 0.1 slack)", est.slope, est.target)));
            let mut csv = String::from("K,eta,mean,se,worst,c_star\n");
            for row in &est.rows {
                writeln!(csv, "{},{},{},{},{},{}", num(row.k), num(row.eta), num(row.mean), num(row.se), num(row.worst), num(row.mean / row.k.powf(2.0 * est.r))).unwrap();
            }
            files.push((format!("{name}.json"), json(kind, &system, seed, &verdicts, &est)));
            files.push((format!("{name}.csv"), csv.into_bytes()));
        }
        Kind::ExitTimes => {
            let d = ExitPlan::default();
            let plan = ExitPlan {
                delta: cfg.get_or("delta", d.delta)?,
                paths: positive(cfg, "paths", cfg.get_or("paths", d.paths)?)?,
                dt_scale: positive(cfg, "dt_scale", cfg.get_or("dt_scale", d.dt_scale)?)?,
                censor_scale: positive(cfg, "censor_scale", cfg.get_or("censor_scale", d.censor_scale)?)?,
                calibration_quantile: cfg.get_or("quantile", d.calibration_quantile)?,
            };
            let grid = k_grid(cfg, &[50.0, 100.0, 200.0, 400.0])?;
            let rep = coercivity::exit_time_scaling(&system, &grid, &plan, seed, exec)?;
            verdicts.push(Verdict::new("exit_by_threshold", rep.passed, format!("C0 = {:.4} calibrated at K = {}", rep.c0, rep.calibration_k)));
            let mut csv = String::from("K,threshold,median,fraction_by_threshold,censored_fraction\n");
            for row in &rep.rows {
                writeln!(
                    csv,
                    "{},{},{},{},{}",
                    num(row.k),
                    num(row.threshold),
                    row.median.map(num).unwrap_or_default(),
                    num(row.fraction_by_threshold),
                    num(row.censored_fraction)
                )
                .unwrap();
            }
            files.push((format!("{name}.json"), json(kind, &system, seed, &verdicts, &rep)));
            files.push((format!("{name}.csv"), csv.into_bytes()));
        }
        Kind::Lyapunov => match cfg.raw("lyapunov").unwrap_or("local") {
            "local" => {
                let k = cfg.get_or("K", 1e4)?;
                let points = positive(cfg, "points", cfg.get_or("points", 20usize)?)?;
                let paths = positive(cfg, "paths", cfg.get_or("paths", 10_000usize)?)?;
                let rep = coercivity::local_lyapunov_drift_check(&system, k, points, paths, seed, exec)?;
                let neg = rep.rows.iter().filter(|r| r.negative).count();
                verdicts.push(Verdict::new("generator_negative", rep.rows.iter().all(|r| r.negative), format!("{neg} of {points} points with 𝓛V_K + 1.96 SE < 0")));
                verdicts.push(Verdict::new("pointwise_bounds", rep.rows.iter().all(|r| r.bounds_ok), format!("γ = {:e}", rep.gamma)));
                let mut csv = String::from("x1,x2,x3,V,generator,se,rate\n");
                for r in &rep.rows {
                    let p = &r.point;
                    writeln!(csv, "{},{},{},{},{},{},{}", num(p[0]), num(p[1]), num(p[2]), num(r.value), num(r.generator.estimate), num(r.generator.se), num(r.rate)).unwrap();
                }
                files.push((format!("{name}.json"), json(kind, &system, seed, &verdicts, &rep)));
                files.push((format!("{name}.csv"), csv.into_bytes()));
            }
            "subgeometric" => {
                let d = DriftPlan::default();
                let plan = DriftPlan {
                    r: cfg.get_or("r", d.r)?,
                    p: cfg.get_or("p", d.p)?,
                    t: cfg.get_or("T", d.t)?,
                    k_max: cfg.get_or("K_max", d.k_max)?,
                    states: positive(cfg, "states", cfg.get_or("states", d.states)?)?,
                    paths: positive(cfg, "paths", cfg.get_or("paths", d.paths)?)?,
                    steps: positive(cfg, "steps", cfg.get_or("steps", d.steps)?)?,
                    nested_inner: cfg.get_or("nested_inner", d.nested_inner)?,
                    nested_outer: cfg.get_or("nested_outer", d.nested_outer)?,
                    budget: cfg.get_or("budget", d.budget)?,
                };
                let rep = coercivity::subgeometric_drift_check(&system, &plan, seed, exec)?;
                verdicts.push(Verdict::new("drift_fit", rep.passed, format!("α = {:e}, β = {:e}", rep.alpha, rep.beta)));
                let mut csv = String::from("norm,v_tilde,generator,se\n");
                for r in &rep.rows {
                    writeln!(csv, "{},{},{},{}", num(r.norm), num(r.v_tilde), num(r.generator), num(r.generator_se)).unwrap();
                }
                files.push((format!("{name}.json"), json(kind, &system, seed, &verdicts, &rep)));
                files.push((format!("{name}.csv"), csv.into_bytes()));
            }
            other => return Err(cfg.bad("lyapunov", format!("unknown check `{other}` (local, subgeometric)"))),
        },
        Kind::Stationary => {
            let x = x0(cfg, &system)?.unwrap_or_else(|| vec![0.0; system.dim()]);
            let t_max = positive(cfg, "t_max", cfg.get_or("t_max", 1000.0f64)?)?;
            let burn_in = cfg.get_or("burn_in", 100.0f64)?;
            let dt = positive(cfg, "dt", cfg.get_or("dt", 1e-2f64)?)?;
            let config = IntegratorConfig::new(dt.min(t_max), t_max)?.with_scheme(scheme(cfg)?);
            let p = cfg.list("p")?.unwrap_or_else(|| vec![0.25]);
            let paths = positive(cfg, "paths", cfg.get_or("paths", 100usize)?)?;
            let cert = if cfg.get_or("certified", true)? { Some(spectral::certify(&system, &CertifyOptions { seed, ..CertifyOptions::default() })?) } else { None };
            let est = coercivity::stationary_moments(&system, &x, &config, burn_in, &p, paths, cert.as_ref(), &RngPolicy::new(seed), exec).map_err(|e| match e {
                quadsde_core::Error::OutOfRange(m) if m.contains("moment range") => cfg.bad("p", m),
                e => e.into(),
            })?;
            for row in &est.rows {
                verdicts.push(Verdict::new(&format!("stable(p={})", row.p), row.stable, format!("split-half ratio {:.4}", row.ratio)));
            }
            let mut csv = String::from("p,full,full_se,second_half,ratio,stable\n");
            for r in &est.rows {
                writeln!(csv, "{},{},{},{},{},{}", num(r.p), num(r.full), num(r.full_se), num(r.second_half), num(r.ratio), r.stable).unwrap();
            }
            files.push((format!("{name}.json"), json(kind, &system, seed, &verdicts, &est)));
            files.push((format!("{name}.csv"), csv.into_bytes()));
        }
    }
    Ok(Outcome { kind, files, verdicts })
}

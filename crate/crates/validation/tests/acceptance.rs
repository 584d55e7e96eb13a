//! Acceptance criteria, one PASS/FAIL line each. Runs without the libtest
//! harness so every line is printed even when an earlier criterion fails;
//! the exit status is nonzero if any criterion fails.

use std::time::{Duration, Instant};

use quadsde_core::coercivity::*;
use quadsde_core::engine::*;
use quadsde_core::linalg::{self, Mat, Vector};
use quadsde_core::spectral::*;
use quadsde_core::stats::linear_fit;
use quadsde_core::tensor::{energy_residual_certificate, sampled_conservation_check};
use quadsde_core::zoo::*;
use quadsde_core::{DampingOperator, NoiseOperator, SdeSystem};
use quadsde_lab::{execute, ExperimentConfig};

type Outcome = Result<(bool, String), String>;
type Criterion = (u32, &'static str, Option<u64>, fn() -> Outcome);

fn model(v: Variant, params: &[(&str, &str)]) -> SdeSystem {
    params.iter().fold(ModelSpec::new(v), |s, (k, val)| s.with(k, val)).build().expect("zoo model builds")
}

fn exec() -> Executor {
    Executor::from_env().expect("worker count")
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn within_budget(elapsed: Duration, limit: Option<u64>) -> bool {
    limit.is_none_or(|s| elapsed.as_secs_f64() < s as f64)
}

fn structural() -> Outcome {
    let models = [model(Variant::Triad, &[]), model(Variant::Lorenz96, &[]), model(Variant::Sabra, &[]), model(Variant::GalerkinNs2d, &[])];
    let mut ok = true;
    let mut notes = Vec::new();
    for (i, s) in models.iter().enumerate() {
        let sym = energy_residual_certificate(&s.tensor);
        let pts = sampled_conservation_check(&s.tensor, 10_000, 100 + i as u64);
        ok &= sym.max_residual == 0.0 && pts.max_residual <= 1e-12;
        notes.push(format!("{} symbolic {:e} sampled {:.1e}", s.name, sym.max_residual, pts.max_residual));
    }
    Ok((ok, notes.join("; ")))
}

fn sorted_eigs(l: &Mat) -> Result<Vec<(f64, f64)>, String> {
    let mut v: Vec<(f64, f64)> = eigenvalues(l).map_err(err)?.iter().map(|z| (z.re, z.im)).collect();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(v)
}

fn spectrum_error(l: &Mat, want: &[(f64, f64)]) -> Result<f64, String> {
    let got = sorted_eigs(l)?;
    let mut want = want.to_vec();
    want.sort_by(|a, b| a.partial_cmp(b).unwrap());
    if got.len() != want.len() {
        return Ok(f64::INFINITY);
    }
    Ok(got.iter().zip(&want).map(|(g, w)| (g.0 - w.0).abs().max((g.1 - w.1).abs())).fold(0.0, f64::max))
}

/// L_x restricted to the coordinates outside the excited shell.
fn sabra_restriction(delta: f64, shell: usize, theta: f64) -> Result<Mat, String> {
    let j = 4;
    let s = model(Variant::Sabra, &[("delta", &delta.to_string())]);
    let mut x = vec![0.0; 2 * j];
    (x[shell - 1], x[j + shell - 1]) = (theta.cos(), theta.sin());
    let cols: Vec<Vector> = (0..2 * j).filter(|&i| i != shell - 1 && i != j + shell - 1).map(|i| linalg::unit(2 * j, i)).collect();
    Ok(restrict_to(&linearize(&s, &x).map_err(err)?, &Mat::from_columns(&cols)))
}

fn sabra_eigenvalues() -> Outcome {
    let mut worst: f64 = 0.0;
    for delta in [0.3f64, 0.5, 0.6] {
        let lam = 2.0 * (delta * (1.0 - delta)).sqrt();
        let want = [(lam, 0.0), (lam, 0.0), (-lam, 0.0), (-lam, 0.0), (0.0, 0.0), (0.0, 0.0)];
        worst = worst.max(spectrum_error(&sabra_restriction(delta, 1, 0.4)?, &want)?);
    }
    for delta in [0.3f64, 0.5, 0.75] {
        let lam = 2.0 * (5.0 * delta - 4.0 * delta * delta - 1.0).sqrt();
        let want = [(0.0, 0.0), (0.0, 0.0), (lam, 0.0), (lam, 0.0), (-lam, 0.0), (-lam, 0.0)];
        worst = worst.max(spectrum_error(&sabra_restriction(delta, 2, -1.2)?, &want)?);
    }
    Ok((worst <= 1e-9, format!("max eigenvalue error {worst:.1e} over shells 1 and 2")))
}

fn triad_spectrum() -> Outcome {
    let s = model(Variant::Triad, &[("kernel", "e3")]);
    let l = restrict_perp(&linearize(&s, &[0.0, 0.0, 1.0]).map_err(err)?, &s.decomposition);
    let e = spectrum_error(&l, &[(1.0, 0.0), (-1.0, 0.0)])?;
    let c = certify(&s, &CertifyOptions::default()).map_err(err)?;
    let range_ok = c.moment_range.p_max == Some(1.0 / 3.0) && c.moment_range.strict;
    let ok = e <= 1e-12 && c.theorem_matched == Theorem::OneDimensional && range_ok;
    Ok((
        ok,
        format!(
            "eigenvalue error {e:.1e}; {} with p < {:?} (strict {})",
            serde_json::to_string(&c.theorem_matched).map_err(err)?,
            c.moment_range.p_max.unwrap_or(f64::INFINITY),
            c.moment_range.strict
        ),
    ))
}

fn lorenz96_growth() -> Outcome {
    let n = 6;
    let s = model(Variant::Lorenz96, &[("a", "0,1,1,1,1,1")]);
    let l = restrict_perp(&linearize(&s, linalg::unit(n, 0).as_slice()).map_err(err)?, &s.decomposition);
    let (full, _) = growth_exponent(&l, None);
    let v = s.decomposition.q_perp().transpose() * linalg::unit(n, n - 2);
    let (along, _) = growth_exponent(&l, Some(&v));
    let ok = (full - 3.0).abs() <= 0.25 && (along - 1.0).abs() <= 0.1;
    Ok((ok, format!("operator-norm exponent {full:.3} (want 3 ± 0.25), e_(n-1) exponent {along:.3} (want 1 ± 0.1)")))
}

fn ns_instability() -> Outcome {
    let s = model(Variant::GalerkinNs2d, &[]);
    let mut z = vec![0.0; s.dim()];
    z[ns_coordinate(3, (2, 0)).ok_or("mode (2,0) missing")?] = 1.0;
    let rep = classify_point(&s, &z).map_err(err)?;
    Ok((rep.lambda_r_max > 1e-4, format!("max real part {:.4}", rep.lambda_r_max)))
}

fn transversality() -> Outcome {
    let diag = model(Variant::Triad, &[("kernel", "diag")]);
    let rep = transversality_scan(&diag, 4, 64, 1).map_err(err)?;
    let min1 = rep.min_per_order[0];
    let diag_ok = rep.passed() && rep.j_used == 1 && (min1 - 6f64.sqrt() / 3.0).abs() <= 1e-10;

    let plane = model(Variant::Triad, &[("kernel", "plane")]);
    let ders = flow_derivatives(&plane, &[0.0, 0.0, 1.0], 4);
    let departure = ders[1..].iter().map(|d| plane.decomposition.perp_norm(d)).fold(0.0, f64::max);
    let plane_ok = departure <= TRANSVERSE_THRESHOLD && !transversality_scan(&plane, 4, 64, 1).map_err(err)?.passed();
    Ok((diag_ok && plane_ok, format!("diagonal kernel: j = {}, min {min1:.12}; plane kernel at (0,0,1): max perp derivative {departure:e}", rep.j_used)))
}

fn energy_balance() -> Outcome {
    let s = SdeSystem::new("triad", triad_tensor(), DampingOperator::diagonal(&[0.0, 0.0, 1.0]).map_err(err)?, NoiseOperator::identity(3), None).map_err(err)?;
    let b = energy_balance_check(&s, &[1.0, 1.0, 1.0], 1.0, 1e-3, 10_000, &RngPolicy::new(7), &exec()).map_err(err)?;
    let ok = b.valid && (b.lhs - b.rhs).abs() <= 3.0 * b.se;
    Ok((ok, format!("lhs {:.4} rhs {:.4} SE {:.4} (|z| = {:.2})", b.lhs, b.rhs, b.se, b.z_score.abs())))
}

fn energy_deviation() -> Outcome {
    let s = model(Variant::Triad, &[("kernel", "e3")]);
    let ex = exec();
    let ks = [10.0, 100.0, 1000.0];
    let mut rows = Vec::new();
    for (i, &k) in ks.iter().enumerate() {
        let d = energy_deviation_probability(&s, &[0.0, 0.0, k], 0.01, 0.5, 100_000, None, &RngPolicy::new(20 + i as u64), &ex).map_err(err)?;
        rows.push(d);
    }
    let desc = rows.iter().zip(&ks).map(|(d, k)| format!("K={k}: {}/{} (upper {:.1e})", d.hits, d.paths, d.interval.1)).collect::<Vec<_>>().join(", ");
    if rows.iter().any(|d| d.hits == 0) {
        return Ok((false, format!("slope undefined, some probabilities are 0; {desc}")));
    }
    let lx: Vec<f64> = ks.iter().map(|k| k.ln()).collect();
    let ly: Vec<f64> = rows.iter().map(|d| d.probability.ln()).collect();
    let fit = linear_fit(&lx, &ly).ok_or("fit failed")?;
    Ok((fit.slope <= -1.5, format!("slope {:.3}; {desc}", fit.slope)))
}

fn exit_times() -> Outcome {
    let s = model(Variant::TriadRotated, &[]);
    let rep = exit_time_scaling(&s, &[50.0, 100.0, 200.0, 400.0], &ExitPlan::default(), 31, &exec()).map_err(err)?;
    let held = &rep.rows[1..];
    let ok = rep.c0.is_finite() && held.iter().all(|r| r.fraction_by_threshold >= 0.5);
    let desc = held.iter().map(|r| format!("K={}: {:.3}", r.k, r.fraction_by_threshold)).collect::<Vec<_>>().join(", ");
    Ok((ok, format!("C0 = {:.3} at K=50; fractions {desc}", rep.c0)))
}

fn coercivity() -> Outcome {
    let s = model(Variant::Triad, &[("kernel", "e3")]);
    let r = 1.0 / 7.0;
    let base = RegionSpec::new(100.0, 0.05, r).map_err(err)?;
    let est = coercivity_exponent_fit(&s, &base, &[1e2, 1e3, 1e4], &EtaRule::Transverse { prefactor: 1.0 }, &CoercivityPlan::default(), 41, &exec()).map_err(err)?;
    let ok = est.slope >= 2.0 * r - 0.1 && est.c_star_spread < 3.0;
    Ok((ok, format!("slope {:.3} (need >= {:.3}), c* spread {:.3}, c*_lower {:.4}", est.slope, 2.0 * r - 0.1, est.c_star_spread, est.c_star_lower)))
}

fn local_lyapunov() -> Outcome {
    let s = model(Variant::TriadRotated, &[]);
    let rep = local_lyapunov_drift_check(&s, 1e4, 20, 10_000, 51, &exec()).map_err(err)?;
    let neg = rep.rows.iter().filter(|r| r.negative).count();
    let bounds = rep.rows.iter().filter(|r| r.bounds_ok).count();
    let ok = rep.rows.len() == 20 && neg == 20 && bounds == 20;
    Ok((ok, format!("{neg}/20 negative at 95%, {bounds}/20 within bounds, min decay rate {:.3e}, gamma {:.2e}", rep.min_rate, rep.gamma)))
}

fn stationary() -> Outcome {
    let ex = exec();
    let cfg = IntegratorConfig::new(1e-2, 1000.0).map_err(err)?;
    let s = model(Variant::Lorenz96, &[]);
    let cert = certify(&s, &CertifyOptions::default()).map_err(err)?;
    let est = stationary_moments(&s, &[0.0; 6], &cfg, 100.0, &[0.25], 100, Some(&cert), &RngPolicy::new(61), &ex).map_err(err)?;
    let free = model(Variant::Lorenz96, &[("a", "0,0,0,0,0,0")]);
    let ctrl = stationary_moments(&free, &[0.0; 6], &cfg, 100.0, &[0.25, 2.0], 100, None, &RngPolicy::new(62), &ex).map_err(err)?;
    let row = &est.rows[0];
    let ok = row.stable && !ctrl.rows[1].stable;
    Ok((
        ok,
        format!(
            "p=1/4 ratio {:.2e} ({}); A=0 control ratio {:.3} at p=1/4, {:.3} at p=2 ({})",
            row.ratio,
            if row.stable { "stable" } else { "unstable" },
            ctrl.rows[0].ratio,
            ctrl.rows[1].ratio,
            if ctrl.rows[1].stable { "stable" } else { "unstable" }
        ),
    ))
}

fn determinism() -> Outcome {
    let configs = [
        "kind = check\nmodel = sabra\nseed = 3\n",
        "kind = simulate\nmodel = triad\nkernel = e3\nseed = 11\nx0 = 1,1,1\nt_max = 0.5\ndt = 0.01\npaths = 300\n",
        "kind = coercivity\nmodel = triad\nkernel = e3\nseed = 5\nr = 0.142857\nK_grid = 100,1000,10000\npoints = 8\npaths = 8\n",
        "kind = exit-times\nmodel = triad_rotated\nseed = 6\nK_grid = 50,100\npaths = 64\n",
        "kind = lyapunov\nmodel = triad_rotated\nseed = 7\npoints = 3\npaths = 400\n",
        "kind = stationary\nmodel = lorenz96\nseed = 8\nt_max = 20\nburn_in = 5\npaths = 12\n",
    ];
    let (one, four) = (Executor::new(1).map_err(err)?, Executor::new(4).map_err(err)?);
    let mut bytes = 0;
    for text in configs {
        let cfg = ExperimentConfig::parse(text).map_err(err)?;
        let a = execute(&cfg, &one).map_err(err)?;
        let b = execute(&cfg, &four).map_err(err)?;
        if a.files != b.files {
            let kind = cfg.raw("kind").unwrap_or("?");
            return Ok((false, format!("`{kind}` reports differ between 1 and 4 workers")));
        }
        bytes += a.files.iter().map(|(_, f)| f.len()).sum::<usize>();
    }
    Ok((true, format!("{} experiment kinds, {bytes} report bytes identical for 1 and 4 workers", configs.len())))
}

fn main() {
    let criteria: [Criterion; 13] = [
        (1, "structural_certificates", Some(5), structural),
        (2, "sabra_eigenvalues", None, sabra_eigenvalues),
        (3, "triad_spectrum", None, triad_spectrum),
        (4, "lorenz96_jordan_growth", Some(10), lorenz96_growth),
        (5, "ns_shear_instability", Some(30), ns_instability),
        (6, "transversality", None, transversality),
        (7, "ito_energy_balance", Some(120), energy_balance),
        (8, "energy_deviation_scaling", Some(300), energy_deviation),
        (9, "exit_time_law", Some(600), exit_times),
        (10, "coercivity_exponent", Some(900), coercivity),
        (11, "local_lyapunov_drift", Some(600), local_lyapunov),
        (12, "stationary_moments", Some(1200), stationary),
        (13, "determinism", None, determinism),
    ];
    let mut failed = 0;
    for (id, name, limit, run) in criteria {
        let start = Instant::now();
        let result = run();
        let elapsed = start.elapsed();
        let (ok, detail) = match result {
            Ok((ok, d)) => (ok && within_budget(elapsed, limit), d),
            Err(e) => (false, format!("error: {e}")),
        };
        let budget = limit.map_or(String::new(), |s| format!(", limit {s} s"));
        println!("{} {id:>2} {name}: {detail} [{:.1} s{budget}]", if ok { "PASS" } else { "FAIL" }, elapsed.as_secs_f64());
        failed += usize::from(!ok);
    }
    println!("acceptance: {} of {} criteria pass", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}

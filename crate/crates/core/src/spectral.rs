//! Frozen linearizations L_x v = B(x,v) + B(v,x) at kernel points, their
//! spectral/Jordan classification, transversality of the conservative flow and
//! the theorem-matching certificate.

use nalgebra::Schur;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{self, CMat, Mat, Vector};
use crate::stats::{linear_fit, log_space};
use crate::system::{cancellation_check, combined_cancellation_check, coords, pair_interaction_lower_bound, KernelDecomposition, SdeSystem};
use crate::tensor::{energy_residual_certificate, Check, IDENTITY_TOL};
use crate::zoo;

/// Real parts above this count as exponential instability.
pub const EPS_SPEC: f64 = 1e-8;
/// Fitted growth exponents at or above this are Jordan-type growth.
pub const JORDAN_SLOPE_MIN: f64 = 0.75;
/// Eigenvector conditioning above this is flagged unreliable.
pub const KAPPA_MAX: f64 = 1e8;
/// |Π_⊥ X^{(j)}| at or below this counts as no departure from the kernel.
pub const TRANSVERSE_THRESHOLD: f64 = 1e-8;
pub const J_MAX_LIMIT: usize = 8;

/// L_x as a dense matrix: column k is B(x, e_k) + B(e_k, x).
pub fn linearize(system: &SdeSystem, x: &[f64]) -> Result<Mat> {
    let n = system.dim();
    check_dim(n, x.len())?;
    let mut l = Mat::zeros(n, n);
    for &(i, j, k, v) in system.tensor.entries() {
        l[(i, k)] += v * x[j];
        l[(i, j)] += v * x[k];
    }
    Ok(l)
}

/// q_perpᵀ L q_perp.
pub fn restrict_perp(l: &Mat, decomposition: &KernelDecomposition) -> Mat {
    restrict_to(l, decomposition.q_perp())
}

/// qᵀ L q for an orthonormal basis q.
pub fn restrict_to(l: &Mat, q: &Mat) -> Mat {
    q.transpose() * l * q
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StabilityClass {
    SpectrallyUnstable,
    JordanUnstable(u32),
    NotUnstable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralReport {
    pub point: Vec<f64>,
    /// Eigenvalues of L_x^⊥ as [re, im], sorted by decreasing real part.
    pub eigenvalues: Vec<[f64; 2]>,
    pub lambda_r_max: f64,
    pub class: StabilityClass,
    /// Slope of log‖e^{tL}‖ against log t; absent for spectrally unstable input.
    pub growth_exponent_fit: Option<f64>,
    pub fit_error: Option<f64>,
    /// ‖P‖ + ‖P⁻¹‖ for the unit-column eigenvector matrix; absent when defective.
    pub conditioning: Option<f64>,
    pub conditioning_reliable: bool,
    /// ‖P‖ + ‖P⁻¹‖ for orthonormal bases of the generalized eigenspaces; this
    /// bounds the block-diagonalizing change of basis when L is defective.
    pub block_conditioning: Option<f64>,
}

impl SpectralReport {
    /// Eigenvector conditioning when available, else the generalized
    /// eigenspace one; None when neither is finite and ≤ KAPPA_MAX.
    pub fn jnf_conditioning(&self) -> Option<f64> {
        self.conditioning.or(self.block_conditioning).filter(|k| *k <= KAPPA_MAX)
    }
}

/// Eigenvalues sorted by decreasing real part, then decreasing imaginary part.
pub fn eigenvalues(l: &Mat) -> Result<Vec<Complex64>> {
    if l.is_empty() {
        return Ok(Vec::new());
    }
    // nalgebra's shifted QR can stall on exactly structured sparse input; an
    // orthogonal similarity with a fixed seeded rotation breaks the structure
    let schur = Schur::try_new(l.clone(), f64::EPSILON, 10_000)
        .or_else(|| {
            let n = l.nrows();
            let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
            let g = Mat::from_fn(n, n, |_, _| StandardNormal.sample(&mut rng));
            let q = g.qr().q();
            Schur::try_new(q.transpose() * l * &q, f64::EPSILON, 10_000)
        })
        .ok_or_else(|| Error::Eigen("Schur iteration did not converge".into()))?;
    let mut ev: Vec<Complex64> = schur.complex_eigenvalues().iter().copied().collect();
    if ev.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::Eigen("non-finite eigenvalue".into()));
    }
    ev.sort_by(|a, b| b.re.total_cmp(&a.re).then(b.im.total_cmp(&a.im)));
    Ok(ev)
}

/// Largest ‖e^{tL}‖ (or |e^{tL}v|) growth exponent: least-squares slope of
/// the log-norm against log t on the upper decade of log-spaced samples in
/// [1, 10³]. Returns (slope, rms residual).
pub fn growth_exponent(l: &Mat, v: Option<&Vector>) -> (f64, f64) {
    let ts = log_space(1.0, 1e3, 31);
    let (mut lx, mut ly) = (Vec::new(), Vec::new());
    for &t in ts.iter().filter(|t| **t >= 1e2 * (1.0 - 1e-12)) {
        let e = linalg::expm(&(l * t));
        let nrm = match v {
            Some(v) => (&e * v).norm(),
            None => linalg::spectral_norm(&e),
        };
        lx.push(t.ln());
        ly.push(nrm.max(f64::MIN_POSITIVE).ln());
    }
    match linear_fit(&lx, &ly) {
        Some(f) => (f.slope, f.rms_residual),
        None => (0.0, 0.0),
    }
}

struct Cluster {
    center: Complex64,
    size: usize,
}

fn clusters(ev: &[Complex64], scale: f64) -> Vec<Cluster> {
    let tol = 1e-6 * scale;
    let mut out: Vec<(Vec<Complex64>, Complex64)> = Vec::new();
    for &z in ev {
        match out.iter_mut().find(|(_, c)| (*c - z).norm() <= tol) {
            Some((members, c)) => {
                members.push(z);
                *c = members.iter().sum::<Complex64>() / members.len() as f64;
            }
            None => out.push((vec![z], z)),
        }
    }
    out.into_iter().map(|(m, c)| Cluster { center: c, size: m.len() }).collect()
}

fn shifted(l: &Mat, lambda: Complex64) -> CMat {
    let n = l.nrows();
    linalg::to_complex(l) - CMat::identity(n, n) * lambda
}

/// ‖P‖ + ‖P⁻¹‖ for the eigenvector matrix with unit columns; None when some
/// eigenvalue cluster lacks a full set of eigenvectors.
fn eigenvector_conditioning(l: &Mat, ev: &[Complex64]) -> Option<f64> {
    let n = l.nrows();
    if n == 0 {
        return Some(2.0);
    }
    let scale = 1.0 + linalg::spectral_norm(l);
    let mut cols = Vec::with_capacity(n);
    for c in clusters(ev, scale) {
        let (vals, vecs) = linalg::smallest_singular_vectors(&shifted(l, c.center), c.size);
        if vals.last().copied().unwrap_or(0.0) > 1e-6 * scale {
            return None;
        }
        cols.extend(vecs);
    }
    basis_conditioning(&cols)
}

fn basis_conditioning(cols: &[nalgebra::DVector<Complex64>]) -> Option<f64> {
    let p = CMat::from_columns(cols);
    let sv = p.svd(false, false).singular_values;
    let (smax, smin) = (sv.max(), sv.min());
    if smin <= 0.0 || !smin.is_finite() {
        return None;
    }
    Some(smax + 1.0 / smin)
}

fn generalized_eigenspace_conditioning(l: &Mat, ev: &[Complex64]) -> Option<f64> {
    let n = l.nrows();
    if n == 0 {
        return Some(2.0);
    }
    let scale = 1.0 + linalg::spectral_norm(l);
    let mut cols = Vec::with_capacity(n);
    for c in clusters(ev, scale) {
        let (k, ok) = jordan_index(l, c.center, c.size, scale);
        let basis = null_of_power(l, c.center, k, scale);
        if !ok || basis.ncols() != c.size {
            return None;
        }
        cols.extend(basis.column_iter().map(|v| v.into_owned()));
    }
    basis_conditioning(&cols)
}

pub fn classify_equilibrium(l_perp: &Mat) -> Result<SpectralReport> {
    let ev = eigenvalues(l_perp)?;
    let lambda_r_max = ev.first().map_or(f64::NEG_INFINITY, |z| z.re);
    let conditioning = eigenvector_conditioning(l_perp, &ev);
    let block_conditioning = match conditioning {
        Some(k) => Some(k),
        None => generalized_eigenspace_conditioning(l_perp, &ev),
    };
    let (class, fit, err) = if l_perp.is_empty() {
        (StabilityClass::NotUnstable, Some(0.0), Some(0.0))
    } else if lambda_r_max > EPS_SPEC {
        (StabilityClass::SpectrallyUnstable, None, None)
    } else {
        let (slope, rms) = growth_exponent(l_perp, None);
        let class = if slope >= JORDAN_SLOPE_MIN { StabilityClass::JordanUnstable(slope.round() as u32) } else { StabilityClass::NotUnstable };
        (class, Some(slope), Some(rms))
    };
    Ok(SpectralReport {
        point: Vec::new(),
        eigenvalues: ev.iter().map(|z| [z.re, z.im]).collect(),
        lambda_r_max: if lambda_r_max.is_finite() { lambda_r_max } else { 0.0 },
        class,
        growth_exponent_fit: fit,
        fit_error: err,
        conditioning,
        conditioning_reliable: conditioning.is_some_and(|k| k <= KAPPA_MAX),
        block_conditioning,
    })
}

/// Classification of L_z^⊥ at the unit vector z/|z|.
pub fn classify_point(system: &SdeSystem, z: &[f64]) -> Result<SpectralReport> {
    let nz = linalg::norm(z);
    if nz == 0.0 {
        return Err(Error::OutOfRange("classification point must be non-zero".into()));
    }
    let u: Vec<f64> = z.iter().map(|v| v / nz).collect();
    let l = restrict_perp(&linearize(system, &u)?, &system.decomposition);
    let mut rep = classify_equilibrium(&l)?;
    rep.point = u;
    Ok(rep)
}

/// Unit vectors in the span of the orthonormal columns of `q`: the columns and
/// their negatives, then Gaussian draws with antipodes up to `samples` points.
pub fn sample_sphere(q: &Mat, samples: usize, seed: u64) -> Vec<Vector> {
    let d = q.ncols();
    if d == 0 {
        return Vec::new();
    }
    let mut pts = Vec::new();
    for c in q.column_iter() {
        pts.push(c.into_owned());
        pts.push(-c.into_owned());
    }
    if d == 1 {
        return pts;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    while pts.len() < samples {
        let g = Vector::from_fn(d, |_, _| StandardNormal.sample(&mut rng));
        let nrm = g.norm();
        if nrm == 0.0 {
            continue;
        }
        let v = q * (g / nrm);
        pts.push(v.clone());
        pts.push(-v);
    }
    pts
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransversalityReport {
    /// Largest first-departure order over the samples (J_max if some sample
    /// never departs).
    pub j_used: usize,
    pub samples: usize,
    pub min_over_samples: f64,
    /// min over samples of |Π_⊥ X^{(j)}| for j = 1..=J_max.
    pub min_per_order: Vec<f64>,
    pub threshold: f64,
    pub failing_points: Vec<Vec<f64>>,
}

impl TransversalityReport {
    pub fn passed(&self) -> bool {
        self.failing_points.is_empty() && self.samples > 0
    }
}

/// Time derivatives X^{(j)}(0), j = 0..=order, of the conservative flow
/// dX/dt = B(X,X) from X(0) = u, via the Leibniz recursion
/// X^{(j+1)} = Σ_{i=0}^{j} C(j,i) B(X^{(i)}, X^{(j−i)}).
pub fn flow_derivatives(system: &SdeSystem, u: &[f64], order: usize) -> Vec<Vec<f64>> {
    let n = system.dim();
    let mut xs = vec![u.to_vec()];
    let mut buf = vec![0.0; n];
    for j in 0..order {
        let mut next = vec![0.0; n];
        let mut binom = 1.0;
        for i in 0..=j {
            system.tensor.eval_into(&xs[i], &xs[j - i], &mut buf);
            for (a, b) in next.iter_mut().zip(&buf) {
                *a += binom * b;
            }
            binom = binom * (j - i) as f64 / (i + 1) as f64;
        }
        xs.push(next);
    }
    xs
}

pub fn transversality_scan(system: &SdeSystem, j_max: usize, samples: usize, seed: u64) -> Result<TransversalityReport> {
    if j_max == 0 || j_max > J_MAX_LIMIT {
        return Err(Error::OutOfRange(format!("J_max must be in 1..={J_MAX_LIMIT}, got {j_max}")));
    }
    if samples == 0 {
        return Err(Error::OutOfRange("transversality scan needs at least one sample".into()));
    }
    let qp = system.decomposition.q_perp();
    let pts = sample_sphere(system.decomposition.q_ker(), samples, seed);
    let mut min_per_order = vec![f64::INFINITY; j_max];
    let mut min_over = f64::INFINITY;
    let mut j_used = 0;
    let mut failing = Vec::new();
    for u in &pts {
        let xs = flow_derivatives(system, u.as_slice(), j_max);
        let perp: Vec<f64> = xs[1..].iter().map(|x| coords(qp, x).norm()).collect();
        for (m, p) in min_per_order.iter_mut().zip(&perp) {
            *m = m.min(*p);
        }
        let best = perp.iter().fold(0.0f64, |m, v| m.max(*v));
        min_over = min_over.min(best);
        match perp.iter().position(|v| *v > TRANSVERSE_THRESHOLD) {
            Some(j) => j_used = j_used.max(j + 1),
            None => {
                j_used = j_max;
                failing.push(u.as_slice().to_vec());
            }
        }
    }
    if pts.is_empty() {
        min_over = 0.0;
        min_per_order.iter_mut().for_each(|m| *m = 0.0);
    }
    Ok(TransversalityReport { j_used, samples: pts.len(), min_over_samples: min_over, min_per_order, threshold: TRANSVERSE_THRESHOLD, failing_points: failing })
}

/// B(z,z) = 0 on span(q) as a quadratic identity: B(b_i,b_i) and
/// B(b_i,b_j) + B(b_j,b_i) on basis pairs; `samples` random points are
/// evaluated as extra evidence.
pub fn subspace_equilibrium_check(system: &SdeSystem, q: &Mat, samples: usize, seed: u64) -> Check {
    let n = system.dim();
    let mut buf = vec![0.0; n];
    let mut max = 0.0f64;
    let cols: Vec<Vector> = q.column_iter().map(|c| c.into_owned()).collect();
    for i in 0..cols.len() {
        for j in i..cols.len() {
            if i == j {
                system.tensor.eval_into(cols[i].as_slice(), cols[i].as_slice(), &mut buf);
            } else {
                system.tensor.sym_eval_into(cols[i].as_slice(), cols[j].as_slice(), &mut buf);
            }
            max = max.max(linalg::norm(&buf));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..samples {
        if cols.is_empty() {
            break;
        }
        let g = Vector::from_fn(cols.len(), |_, _| StandardNormal.sample(&mut rng));
        let z = q * (&g / g.norm().max(f64::MIN_POSITIVE));
        system.tensor.eval_into(z.as_slice(), z.as_slice(), &mut buf);
        max = max.max(linalg::norm(&buf));
    }
    Check::new(max, IDENTITY_TOL * system.tensor.max_abs_entry())
}

pub fn kernel_equilibrium_check(system: &SdeSystem, samples: usize, seed: u64) -> Check {
    subspace_equilibrium_check(system, system.decomposition.q_ker(), samples, seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseExcitation {
    pub passed: bool,
    /// Eigenvalue of maximal real part (ties: largest index) as [re, im].
    pub eigenvalue: [f64; 2],
    /// Size of its largest Jordan block.
    pub index: usize,
    /// dim(Ran σ ∩ R_m) and dim(Ran σ ∩ R_{m−1}), R_k the real span of
    /// null((L − λ)^k) embedded in ℝⁿ.
    pub excited_dims: (usize, usize),
    pub degenerate: bool,
}

/// Whether Ran σ contains a generalized eigenvector of top rank for the
/// eigenvalue of L_x^⊥ with maximal real part.
pub fn noise_excitation_check(system: &SdeSystem, report: &SpectralReport) -> Result<NoiseExcitation> {
    if report.class == StabilityClass::NotUnstable {
        return Err(Error::OutOfRange("noise excitation needs an unstable point".into()));
    }
    let l = restrict_perp(&linearize(system, &report.point)?, &system.decomposition);
    let ev = eigenvalues(&l)?;
    let scale = 1.0 + linalg::spectral_norm(&l);
    let cl = clusters(&ev, scale);
    let rmax = cl.iter().fold(f64::NEG_INFINITY, |m, c| m.max(c.center.re));
    // candidates with maximal real part; pick the one with the longest chain
    let mut best: Option<(Complex64, usize, usize)> = None;
    let mut degenerate = false;
    for c in cl.iter().filter(|c| c.center.re >= rmax - EPS_SPEC) {
        let (index, ok) = jordan_index(&l, c.center, c.size, scale);
        degenerate |= !ok;
        if best.is_none_or(|b| index > b.1) {
            best = Some((c.center, index, c.size));
        }
    }
    let (lambda, index, _) = best.ok_or_else(|| Error::Eigen("empty spectrum".into()))?;
    let qp = system.decomposition.q_perp();
    let ran = linalg::column_space(system.noise.matrix(), 1e-10);
    let sub = |k: usize| -> Mat {
        if k == 0 {
            return Mat::zeros(system.dim(), 0);
        }
        let basis = null_of_power(&l, lambda, k, scale);
        let mut real_cols = Vec::new();
        for c in basis.column_iter() {
            real_cols.push(c.map(|z| z.re));
            real_cols.push(c.map(|z| z.im));
        }
        let r = linalg::orthonormalize(&real_cols, 1e-8);
        qp * r
    };
    let top = linalg::intersection_dim(&ran, &sub(index), 1e-8);
    let below = linalg::intersection_dim(&ran, &sub(index - 1), 1e-8);
    Ok(NoiseExcitation { passed: top > below, eigenvalue: [lambda.re, lambda.im], index, excited_dims: (top, below), degenerate })
}

fn null_of_power(l: &Mat, lambda: Complex64, k: usize, scale: f64) -> CMat {
    let s = shifted(l, lambda);
    let mut p = s.clone();
    for _ in 1..k {
        p = &p * &s;
    }
    let n = l.nrows();
    let svd = p.svd(false, true);
    let vt = svd.v_t.expect("v_t requested");
    let tol = 1e-6 * scale.powi(k as i32);
    let cols: Vec<_> = (0..n).filter(|&i| svd.singular_values[i] <= tol).map(|i| vt.row(i).adjoint()).collect();
    if cols.is_empty() {
        CMat::zeros(n, 0)
    } else {
        CMat::from_columns(&cols)
    }
}

/// Smallest k with dim null((L − λ)^k) equal to the algebraic multiplicity.
fn jordan_index(l: &Mat, lambda: Complex64, mult: usize, scale: f64) -> (usize, bool) {
    for k in 1..=mult {
        if null_of_power(l, lambda, k, scale).ncols() >= mult {
            return (k, true);
        }
    }
    (mult, false)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Theorem {
    #[serde(rename = "trivial")]
    Trivial,
    #[serde(rename = "Thm1.1")]
    Transverse,
    #[serde(rename = "Thm1.2/4.3(1-D kernel)")]
    OneDimensional,
    #[serde(rename = "Thm1.3-spectral")]
    Spectral,
    #[serde(rename = "Thm1.3-jordan")]
    Jordan,
    #[serde(rename = "Thm4.1(combined)")]
    Combined,
    #[serde(rename = "Thm1.6(L96)")]
    Lorenz96,
    #[serde(rename = "Thm1.7(triad-plane)")]
    TriadPlane,
    #[serde(rename = "none")]
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evidence {
    pub name: String,
    pub passed: bool,
    pub value: Option<f64>,
    pub detail: String,
}

/// Predicted range p < p_max (strict) for ⟨x⟩^p ∈ L¹(dμ); `p_max` absent means
/// every finite p.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentRange {
    pub p_max: Option<f64>,
    pub strict: bool,
}

impl MomentRange {
    pub fn contains(&self, p: f64) -> bool {
        match self.p_max {
            None => p.is_finite(),
            Some(m) => p < m || (!self.strict && p == m),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub theorem_matched: Theorem,
    pub all_matches: Vec<Theorem>,
    pub evidence: Vec<Evidence>,
    /// Coercivity exponent r (strict upper bound when `r_strict`).
    pub r_exponent: f64,
    pub r_strict: bool,
    pub moment_range: MomentRange,
}

impl Theorem {
    /// (r, r strict, moment range) as stated for the theorem.
    pub fn exponents(&self) -> (f64, bool, MomentRange) {
        let all = MomentRange { p_max: None, strict: true };
        let third = MomentRange { p_max: Some(1.0 / 3.0), strict: true };
        let two_thirds = MomentRange { p_max: Some(2.0 / 3.0), strict: true };
        match self {
            Theorem::Trivial | Theorem::Transverse => (1.0, false, all),
            Theorem::OneDimensional | Theorem::Jordan | Theorem::Lorenz96 => (1.0 / 7.0, true, third),
            Theorem::Spectral | Theorem::Combined | Theorem::TriadPlane => (0.25, true, two_thirds),
            Theorem::None => (0.0, false, MomentRange { p_max: Some(0.0), strict: true }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CertifyOptions {
    pub samples: usize,
    pub seed: u64,
    pub j_max: usize,
}

impl Default for CertifyOptions {
    fn default() -> Self {
        CertifyOptions { samples: 256, seed: 0, j_max: 4 }
    }
}

fn ev(name: &str, passed: bool, value: Option<f64>, detail: impl Into<String>) -> Evidence {
    Evidence { name: name.to_string(), passed, value: value.filter(|v| v.is_finite()), detail: detail.into() }
}

fn projector_eq(a: &Mat, b: &Mat) -> bool {
    a.shape() == b.shape() && (a - b).abs().max() <= 1e-12
}

/// Runs the structural, spectral and noise checks and names the first
/// theorem whose hypotheses are met, in `Theorem` declaration order.
pub fn certify(system: &SdeSystem, opts: &CertifyOptions) -> Result<Certificate> {
    let n = system.dim();
    let dec = &system.decomposition;
    let d = dec.kernel_dim();
    let mut evidence = Vec::new();
    let mut matches = Vec::new();

    let energy = energy_residual_certificate(&system.tensor);
    evidence.push(ev("energy_residual", energy.passed, Some(energy.max_residual), "max |coefficient| of x·B(x,x)"));
    let noise_rank = linalg::rank(system.noise.matrix(), 1e-10);
    let full_noise = noise_rank == n;
    evidence.push(ev("noise_full_rank", full_noise, Some(noise_rank as f64), format!("rank σ = {noise_rank} of {n}")));
    if !energy.passed {
        return Ok(finish(matches, evidence));
    }
    if d == 0 {
        evidence.push(ev("kernel_trivial", true, Some(0.0), "ker A = {0}: V(x) = |x|² is a Lyapunov function"));
        matches.push(Theorem::Trivial);
        matches.push(Theorem::Transverse);
        return Ok(finish(matches, evidence));
    }

    let trans = transversality_scan(system, opts.j_max, opts.samples, opts.seed)?;
    evidence.push(ev(
        "transversality",
        trans.passed(),
        Some(trans.min_over_samples),
        format!("{} samples, J_max {}, {} failing", trans.samples, opts.j_max, trans.failing_points.len()),
    ));
    if trans.passed() {
        matches.push(Theorem::Transverse);
    }

    let eq = kernel_equilibrium_check(system, opts.samples, opts.seed);
    evidence.push(ev("kernel_equilibria", eq.passed, Some(eq.max_residual), "B(z,z) = 0 on ker A"));
    let canc = cancellation_check(system);
    evidence.push(ev("cancellation", canc.passed, Some(canc.max_residual), "Π_ker(B(z,y) + B(y,z)) = 0"));

    if eq.passed {
        let pts = sample_sphere(dec.q_ker(), opts.samples, opts.seed);
        let mut all_spec = true;
        let mut all_jordan = true;
        let mut all_unstable = true;
        let mut all_excited = true;
        let mut kappa_max = 0.0f64;
        let mut kappa_ok = true;
        let mut lambda_min = f64::INFINITY;
        let mut j_range = (u32::MAX, 0u32);
        for p in &pts {
            let rep = classify_point(system, p.as_slice())?;
            lambda_min = lambda_min.min(rep.lambda_r_max);
            match rep.class {
                StabilityClass::SpectrallyUnstable => {
                    all_jordan = false;
                    match rep.jnf_conditioning() {
                        Some(k) => kappa_max = kappa_max.max(k),
                        None => kappa_ok = false,
                    }
                }
                StabilityClass::JordanUnstable(j) => {
                    all_spec = false;
                    j_range = (j_range.0.min(j), j_range.1.max(j));
                    if j < 1 || j as usize > n.saturating_sub(2) {
                        all_jordan = false;
                    }
                }
                StabilityClass::NotUnstable => {
                    all_spec = false;
                    all_jordan = false;
                    all_unstable = false;
                }
            }
            if rep.class != StabilityClass::NotUnstable {
                let ex = noise_excitation_check(system, &rep)?;
                all_excited &= ex.passed;
            } else {
                all_excited = false;
            }
        }
        evidence.push(ev("kernel_points_unstable", all_unstable, Some(lambda_min), format!("{} points, min max Re λ", pts.len())));
        evidence.push(ev("spectral_instability", all_spec, Some(lambda_min), "every sampled point has Re λ > 1e-8"));
        evidence.push(ev(
            "jordan_instability",
            all_jordan,
            (j_range.1 > 0).then_some(j_range.1 as f64),
            if j_range.1 > 0 { format!("J in [{}, {}]", j_range.0, j_range.1) } else { "no Jordan-type points".into() },
        ));
        evidence.push(ev("eigenvector_conditioning", all_spec && kappa_ok, Some(kappa_max), "max ‖P‖ + ‖P⁻¹‖ over sampled points"));
        evidence.push(ev("noise_excitation", all_excited, None, "Ran σ meets the top generalized eigenspace at every point"));
        if d == 1 && all_unstable && all_excited {
            matches.push(Theorem::OneDimensional);
        }
        if all_spec && kappa_ok && full_noise {
            matches.push(Theorem::Spectral);
        }
        if all_jordan && canc.passed && full_noise {
            matches.push(Theorem::Jordan);
        }
    }

    if dec.split().is_some() && combined_checks(system, opts, full_noise, &mut evidence)? {
        matches.push(Theorem::Combined);
    }

    if let Some(ok) = lorenz96_pattern(system) {
        evidence.push(ev("lorenz96_pattern", ok, None, "ker A = span(e1, e2), n >= 6, q_{n-1} q_n != 0"));
        if ok {
            matches.push(Theorem::Lorenz96);
        }
    }
    if let Some(ok) = triad_plane_pattern(system) {
        let detail = if eq.passed && trans.passed() {
            "triad with ker A the heteroclinic plane".to_string()
        } else {
            "triad with ker A the heteroclinic plane; equilibrium/transversality checks fail on the kernel".to_string()
        };
        evidence.push(ev("triad_plane_pattern", ok && full_noise, None, detail));
        if ok && full_noise {
            matches.push(Theorem::TriadPlane);
        }
    }
    Ok(finish(matches, evidence))
}

fn finish(matches: Vec<Theorem>, evidence: Vec<Evidence>) -> Certificate {
    let first = matches.first().copied().unwrap_or(Theorem::None);
    let (r, strict, range) = first.exponents();
    Certificate { theorem_matched: first, all_matches: matches, evidence, r_exponent: r, r_strict: strict, moment_range: range }
}

fn combined_checks(system: &SdeSystem, opts: &CertifyOptions, full_noise: bool, evidence: &mut Vec<Evidence>) -> Result<bool> {
    let dec = &system.decomposition;
    let (v1, v2) = dec.blocks()?;
    let mut ok = full_noise;
    for (label, v) in [("V1", &v1), ("V2", &v2)] {
        let c = subspace_equilibrium_check(system, v, opts.samples, opts.seed);
        evidence.push(ev(&format!("{label}_equilibria"), c.passed, Some(c.max_residual), format!("B(z,z) = 0 on {label}")));
        ok &= c.passed;
        let comp = linalg::orthonormal_complement(v);
        let pts = sample_sphere(v, (opts.samples / 4).max(8), opts.seed);
        let mut lmin = f64::INFINITY;
        let mut kmax = 0.0f64;
        let mut kok = true;
        for p in &pts {
            let l = restrict_to(&linearize(system, p.as_slice())?, &comp);
            let rep = classify_equilibrium(&l)?;
            lmin = lmin.min(rep.lambda_r_max);
            match rep.jnf_conditioning() {
                Some(k) => kmax = kmax.max(k),
                None => kok = false,
            }
        }
        let spec = lmin > EPS_SPEC;
        evidence.push(ev(&format!("{label}_spectral_instability"), spec, Some(lmin), format!("min max Re λ over {} points", pts.len())));
        evidence.push(ev(&format!("{label}_conditioning"), kok, Some(kmax), "max ‖P‖ + ‖P⁻¹‖"));
        ok &= spec && kok;
    }
    let canc = combined_cancellation_check(system)?;
    evidence.push(ev("combined_cancellation", canc.passed, Some(canc.max_residual), "Π_ker(B(v1,v2) + B(v2,v1)) = 0"));
    let bound = pair_interaction_lower_bound(system, opts.samples, opts.seed)?;
    let lbd = bound.c_min > EPS_SPEC;
    evidence.push(ev("pair_interaction_lower_bound", lbd, Some(bound.c_min), "min |Π_⊥(B(v1,v2) + B(v2,v1))| over unit pairs"));
    Ok(ok && canc.passed && lbd)
}

fn lorenz96_pattern(system: &SdeSystem) -> Option<bool> {
    let n = system.dim();
    if n < 4 || zoo::lorenz96_tensor(n).ok()? != system.tensor {
        return None;
    }
    let target = Mat::from_columns(&[linalg::unit(n, 0), linalg::unit(n, 1)]);
    let kernel_ok = projector_eq(&system.decomposition.pi_ker(), &(&target * target.transpose()));
    let lam = system.noise.covariance();
    let forced = n >= 6 && lam[(n - 2, n - 2)] > 0.0 && lam[(n - 1, n - 1)] > 0.0;
    Some(kernel_ok && forced)
}

fn triad_plane_pattern(system: &SdeSystem) -> Option<bool> {
    if system.dim() != 3 {
        return None;
    }
    let s2 = 1.0 / 2f64.sqrt();
    let plane = if system.tensor == zoo::triad_tensor() {
        Mat::from_columns(&[Vector::from_column_slice(&[s2, s2, 0.0]), linalg::unit(3, 2)])
    } else if system.tensor == zoo::triad_rotated_tensor() {
        Mat::from_columns(&[linalg::unit(3, 0), linalg::unit(3, 2)])
    } else {
        return None;
    };
    Some(projector_eq(&system.decomposition.pi_ker(), &(&plane * plane.transpose())))
}

//! Damping, noise, kernel decomposition and the assembled SDE system
//! dx = B(x,x) dt − A x dt + σ dW.

use std::collections::BTreeMap;

use nalgebra::SymmetricEigen;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{self, Mat, Vector};
use crate::tensor::{BilinearTensor, Check, IDENTITY_TOL};

/// Eigenvalues of A below this multiple of ‖A‖ count as kernel.
pub const KERNEL_THRESHOLD: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct DampingOperator {
    matrix: Mat,
    kernel_dim: usize,
    norm: f64,
}

impl DampingOperator {
    pub fn new(matrix: Mat) -> Result<Self> {
        let n = matrix.nrows();
        if n == 0 || matrix.ncols() != n {
            return Err(Error::InvalidOperator("damping matrix must be square and non-empty".into()));
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidOperator("damping matrix has non-finite entries".into()));
        }
        for i in 0..n {
            for j in 0..i {
                if matrix[(i, j)] != matrix[(j, i)] {
                    return Err(Error::InvalidOperator(format!("damping matrix not symmetric at ({i},{j})")));
                }
            }
        }
        let eig = SymmetricEigen::new(matrix.clone());
        let norm = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let min = eig.eigenvalues.min();
        if min < -1e-12 * norm {
            return Err(Error::InvalidOperator(format!("damping matrix not PSD (smallest eigenvalue {min:e})")));
        }
        let kernel_dim = eig.eigenvalues.iter().filter(|v| v.abs() <= KERNEL_THRESHOLD * norm).count();
        Ok(DampingOperator { matrix, kernel_dim, norm })
    }

    pub fn diagonal(diag: &[f64]) -> Result<Self> {
        Self::new(Mat::from_diagonal(&Vector::from_column_slice(diag)))
    }

    pub fn matrix(&self) -> &Mat {
        &self.matrix
    }

    pub fn kernel_dim(&self) -> usize {
        self.kernel_dim
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// Spectral norm ‖A‖.
    pub fn norm(&self) -> f64 {
        self.norm
    }

    pub fn is_diagonal(&self) -> bool {
        let n = self.dim();
        (0..n).all(|i| (0..n).all(|j| i == j || self.matrix[(i, j)] == 0.0))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseOperator {
    matrix: Mat,
    covariance: Mat,
}

impl NoiseOperator {
    pub fn new(matrix: Mat) -> Result<Self> {
        if matrix.nrows() == 0 || matrix.ncols() == 0 {
            return Err(Error::InvalidOperator("noise matrix must be non-empty".into()));
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidOperator("noise matrix has non-finite entries".into()));
        }
        let covariance = &matrix * matrix.transpose();
        Ok(NoiseOperator { matrix, covariance })
    }

    pub fn diagonal(diag: &[f64]) -> Result<Self> {
        Self::new(Mat::from_diagonal(&Vector::from_column_slice(diag)))
    }

    pub fn identity(n: usize) -> Self {
        Self::new(Mat::identity(n, n)).expect("identity is a valid noise matrix")
    }

    pub fn matrix(&self) -> &Mat {
        &self.matrix
    }

    /// Λ = σσᵀ.
    pub fn covariance(&self) -> &Mat {
        &self.covariance
    }

    /// tr Λ = Σ σ_ij².
    pub fn trace(&self) -> f64 {
        self.covariance.trace()
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn driving_dim(&self) -> usize {
        self.matrix.ncols()
    }
}

/// Orthonormal bases of ker A and its complement; the first `split` kernel
/// columns span V₁ and the rest V₂ when a split is present.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelDecomposition {
    q_ker: Mat,
    q_perp: Mat,
    split: Option<usize>,
}

impl KernelDecomposition {
    /// Kernel from A. Diagonal A yields coordinate axes; otherwise the
    /// eigenvectors with eigenvalue below the kernel threshold are used.
    pub fn from_damping(damping: &DampingOperator) -> Self {
        let n = damping.dim();
        let a = damping.matrix();
        let thr = KERNEL_THRESHOLD * damping.norm();
        let q_ker = if damping.is_diagonal() {
            let cols: Vec<Vector> = (0..n).filter(|&i| a[(i, i)].abs() <= thr).map(|i| linalg::unit(n, i)).collect();
            if cols.is_empty() {
                Mat::zeros(n, 0)
            } else {
                Mat::from_columns(&cols)
            }
        } else {
            let eig = SymmetricEigen::new(a.clone());
            let cols: Vec<Vector> = (0..n).filter(|&i| eig.eigenvalues[i].abs() <= thr).map(|i| eig.eigenvectors.column(i).into_owned()).collect();
            linalg::orthonormalize(&cols, 1e-8)
        };
        let q_perp = linalg::orthonormal_complement(&q_ker);
        KernelDecomposition { q_ker, q_perp, split: None }
    }

    /// Explicit kernel basis (columns, orthonormalized here) with an optional
    /// V₁/V₂ split after the first `split` columns.
    pub fn with_basis(damping: &DampingOperator, basis: &[Vector], split: Option<usize>) -> Result<Self> {
        let n = damping.dim();
        for b in basis {
            check_dim(n, b.len())?;
        }
        let given = if basis.is_empty() { Mat::zeros(n, 0) } else { Mat::from_columns(basis) };
        // keep an already orthonormal basis verbatim so files round-trip exactly
        let q_ker = if (given.transpose() * &given - Mat::identity(basis.len(), basis.len())).abs().max() <= 1e-15 { given } else { linalg::orthonormalize(basis, 1e-10) };
        if q_ker.ncols() != basis.len() {
            return Err(Error::InvalidOperator("kernel basis is linearly dependent".into()));
        }
        if q_ker.ncols() != damping.kernel_dim() {
            return Err(Error::InvalidOperator(format!("kernel basis has {} vectors but ker A has dimension {}", q_ker.ncols(), damping.kernel_dim())));
        }
        let res = (damping.matrix() * &q_ker).abs().max();
        if res > 1e-12 * damping.norm().max(f64::MIN_POSITIVE) && res > 0.0 {
            return Err(Error::InvalidOperator(format!("A·q_ker residual {res:e} exceeds tolerance")));
        }
        if let Some(s) = split {
            if s == 0 || s >= q_ker.ncols() {
                return Err(Error::InvalidOperator("split must leave both V1 and V2 non-empty".into()));
            }
            // V1 and V2 must be orthogonal for the projectors to be meaningful
            let cross = (q_ker.columns(0, s).transpose() * linalg::orthonormalize(&basis[s..], 1e-10)).abs().max();
            if cross > 1e-12 {
                return Err(Error::InvalidOperator("V1 and V2 are not orthogonal".into()));
            }
        }
        let q_perp = linalg::orthonormal_complement(&q_ker);
        Ok(KernelDecomposition { q_ker, q_perp, split })
    }

    pub fn q_ker(&self) -> &Mat {
        &self.q_ker
    }

    pub fn q_perp(&self) -> &Mat {
        &self.q_perp
    }

    pub fn kernel_dim(&self) -> usize {
        self.q_ker.ncols()
    }

    pub fn dim(&self) -> usize {
        self.q_ker.nrows()
    }

    pub fn split(&self) -> Option<usize> {
        self.split
    }

    /// Bases of V₁ and V₂.
    pub fn blocks(&self) -> Result<(Mat, Mat)> {
        let s = self.split.ok_or(Error::MissingSplit)?;
        let d = self.kernel_dim();
        Ok((self.q_ker.columns(0, s).into_owned(), self.q_ker.columns(s, d - s).into_owned()))
    }

    pub fn pi_ker(&self) -> Mat {
        &self.q_ker * self.q_ker.transpose()
    }

    pub fn pi_perp(&self) -> Mat {
        &self.q_perp * self.q_perp.transpose()
    }

    pub fn ker_norm(&self, x: &[f64]) -> f64 {
        coords(&self.q_ker, x).norm()
    }

    pub fn perp_norm(&self, x: &[f64]) -> f64 {
        coords(&self.q_perp, x).norm()
    }
}

/// Coordinates qᵀx of `x` in the orthonormal columns of `q`.
pub fn coords(q: &Mat, x: &[f64]) -> Vector {
    let mut c = Vector::zeros(q.ncols());
    for (j, col) in q.column_iter().enumerate() {
        c[j] = linalg::dot(col.as_slice(), x);
    }
    c
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdeSystem {
    pub name: String,
    pub tensor: BilinearTensor,
    pub damping: DampingOperator,
    pub noise: NoiseOperator,
    pub decomposition: KernelDecomposition,
    /// Model provenance (variant and parameters), persisted with the system.
    pub meta: BTreeMap<String, String>,
}

impl SdeSystem {
    pub fn new(name: impl Into<String>, tensor: BilinearTensor, damping: DampingOperator, noise: NoiseOperator, decomposition: Option<KernelDecomposition>) -> Result<Self> {
        let n = tensor.dim();
        check_dim(n, damping.dim())?;
        check_dim(n, noise.dim())?;
        let decomposition = match decomposition {
            Some(d) => {
                check_dim(n, d.dim())?;
                if d.kernel_dim() != damping.kernel_dim() {
                    return Err(Error::InvalidOperator("decomposition does not match ker A".into()));
                }
                d
            }
            None => KernelDecomposition::from_damping(&damping),
        };
        Ok(SdeSystem { name: name.into(), tensor, damping, noise, decomposition, meta: BTreeMap::new() })
    }

    pub fn dim(&self) -> usize {
        self.tensor.dim()
    }

    pub fn with_meta(mut self, key: &str, value: impl ToString) -> Self {
        self.meta.insert(key.to_string(), value.to_string());
        self
    }

    /// Same tensor and kernel basis with a different noise matrix.
    pub fn with_noise(mut self, noise: NoiseOperator) -> Result<Self> {
        check_dim(self.dim(), noise.dim())?;
        self.noise = noise;
        Ok(self)
    }

    /// Replace A; the kernel basis is recomputed from the new matrix.
    pub fn with_damping(mut self, damping: DampingOperator) -> Result<Self> {
        check_dim(self.dim(), damping.dim())?;
        self.decomposition = KernelDecomposition::from_damping(&damping);
        self.damping = damping;
        Ok(self)
    }

    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        self.tensor.eval(x, y)
    }
}

/// F(x) = B(x,x) − A x.
pub fn drift(system: &SdeSystem, x: &[f64]) -> Result<Vec<f64>> {
    let mut f = system.tensor.eval(x, x)?;
    let a = system.damping.matrix();
    for (i, fi) in f.iter_mut().enumerate() {
        *fi -= linalg::dot(a.row(i).transpose().as_slice(), x);
    }
    Ok(f)
}

/// D(x) = xᵀ A x.
pub fn dissipation(system: &SdeSystem, x: &[f64]) -> Result<f64> {
    check_dim(system.dim(), x.len())?;
    let a = system.damping.matrix();
    let xv = Vector::from_column_slice(x);
    Ok(xv.dot(&(a * &xv)).max(0.0))
}

/// Π_ker(B(z,y) + B(y,z)) = 0 checked on all (kernel, perp) basis pairs.
pub fn cancellation_check(system: &SdeSystem) -> Check {
    let dec = &system.decomposition;
    let n = system.dim();
    let mut buf = vec![0.0; n];
    let mut max = 0.0f64;
    for z in dec.q_ker().column_iter() {
        for y in dec.q_perp().column_iter() {
            system.tensor.sym_eval_into(z.as_slice(), y.as_slice(), &mut buf);
            max = max.max(coords(dec.q_ker(), &buf).norm());
        }
    }
    Check::new(max, IDENTITY_TOL * system.tensor.max_abs_entry())
}

/// Π_ker(B(v₁,v₂) + B(v₂,v₁)) = 0 on basis pairs of the two kernel blocks, the
/// weaker cancellation the combined-kernel case needs.
pub fn combined_cancellation_check(system: &SdeSystem) -> Result<Check> {
    let (v1, v2) = system.decomposition.blocks()?;
    let qk = system.decomposition.q_ker();
    let mut buf = vec![0.0; system.dim()];
    let mut max = 0.0f64;
    for a in v1.column_iter() {
        for b in v2.column_iter() {
            system.tensor.sym_eval_into(a.as_slice(), b.as_slice(), &mut buf);
            max = max.max(coords(qk, &buf).norm());
        }
    }
    Ok(Check::new(max, IDENTITY_TOL * system.tensor.max_abs_entry()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairBound {
    pub c_min: f64,
    pub witness: (Vec<f64>, Vec<f64>),
}

/// min over unit v₁ ∈ V₁, v₂ ∈ V₂ of |Π_⊥(B(v₁,v₂) + B(v₂,v₁))|.
///
/// For fixed v₁ the map v₂ ↦ Π_⊥(...) is linear, so the inner minimum is the
/// smallest singular value of a small matrix; only the outer block is sampled.
/// A block of dimension ≤ 2 is scanned on an angular grid and refined by
/// golden-section search, larger blocks use `samples` seeded Gaussian draws.
pub fn pair_interaction_lower_bound(system: &SdeSystem, samples: usize, seed: u64) -> Result<PairBound> {
    let (v1, v2) = system.decomposition.blocks()?;
    let swap = v1.ncols() > v2.ncols();
    let (outer, inner) = if swap { (&v2, &v1) } else { (&v1, &v2) };
    let n = system.dim();
    let qp = system.decomposition.q_perp();
    // M[a] has columns Π_⊥ sym(outer_a, inner_b) in perp coordinates
    let mut buf = vec![0.0; n];
    let mats: Vec<Mat> = outer
        .column_iter()
        .map(|oa| {
            let cols: Vec<Vector> = inner
                .column_iter()
                .map(|ib| {
                    system.tensor.sym_eval_into(oa.as_slice(), ib.as_slice(), &mut buf);
                    coords(qp, &buf)
                })
                .collect();
            Mat::from_columns(&cols)
        })
        .collect();
    let inner_min = |c: &[f64]| -> (f64, Vector) {
        let mut g = Mat::zeros(qp.ncols(), inner.ncols());
        for (a, m) in mats.iter().enumerate() {
            g += m * c[a];
        }
        if g.nrows() < g.ncols() {
            // more unknowns than equations: a null vector exists
            let ns = linalg::null_space(&g, f64::INFINITY);
            return (0.0, ns.column(ns.ncols() - 1).into_owned());
        }
        let svd = g.svd(false, true);
        let vt = svd.v_t.expect("v_t requested");
        let last = svd.singular_values.len() - 1;
        (svd.singular_values[last], vt.row(last).transpose())
    };
    let d = outer.ncols();
    let mut best = (f64::INFINITY, Vector::zeros(d), Vector::zeros(inner.ncols()));
    let mut consider = |c: Vector| {
        let (s, w) = inner_min(c.as_slice());
        if s < best.0 {
            best = (s, c, w);
        }
        s
    };
    match d {
        1 => {
            consider(Vector::from_element(1, 1.0));
        }
        2 => {
            let m = samples.max(64);
            let ang = |t: f64| Vector::from_column_slice(&[t.cos(), t.sin()]);
            let step = std::f64::consts::PI / m as f64;
            let mut vals = Vec::with_capacity(m);
            for i in 0..m {
                vals.push(consider(ang(i as f64 * step)));
            }
            let imin = (0..m).min_by(|a, b| vals[*a].total_cmp(&vals[*b])).unwrap();
            let (mut lo, mut hi) = ((imin as f64 - 1.0) * step, (imin as f64 + 1.0) * step);
            let g = (5f64.sqrt() - 1.0) / 2.0;
            for _ in 0..80 {
                let a = hi - g * (hi - lo);
                let b = lo + g * (hi - lo);
                if consider(ang(a)) < consider(ang(b)) {
                    hi = b;
                } else {
                    lo = a;
                }
            }
        }
        _ => {
            for i in 0..d {
                consider(linalg::unit(d, i));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for _ in 0..samples {
                let g: Vector = Vector::from_fn(d, |_, _| StandardNormal.sample(&mut rng));
                let nrm = g.norm();
                if nrm > 0.0 {
                    consider(g / nrm);
                }
            }
        }
    }
    let (c_min, co, ci) = best;
    let (o, i) = (outer * co, inner * ci);
    let witness = if swap { (i, o) } else { (o, i) };
    Ok(PairBound { c_min, witness: (witness.0.as_slice().to_vec(), witness.1.as_slice().to_vec()) })
}

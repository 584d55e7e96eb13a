//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;
pub type CMat = DMatrix<Complex64>;

pub fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

/// Largest singular value.
pub fn spectral_norm(m: &Mat) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone().svd(false, false).singular_values.max()
}

pub fn spectral_norm_c(m: &CMat) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone().svd(false, false).singular_values.max()
}

/// Singular values in descending order.
pub fn singular_values(m: &Mat) -> Vec<f64> {
    if m.is_empty() {
        return Vec::new();
    }
    m.clone().svd(false, false).singular_values.iter().copied().collect()
}

/// Orthonormal basis (as columns) of the null space of `m`, using an absolute
/// singular-value threshold.
pub fn null_space(m: &Mat, tol: f64) -> Mat {
    let n = m.ncols();
    if n == 0 {
        return Mat::zeros(0, 0);
    }
    // pad wide matrices so that V is square
    let padded = if m.nrows() < n {
        let mut p = Mat::zeros(n, n);
        p.view_mut((0, 0), (m.nrows(), n)).copy_from(m);
        p
    } else {
        m.clone()
    };
    let svd = padded.svd(false, true);
    let vt = svd.v_t.expect("v_t requested");
    let cols: Vec<Vector> = svd.singular_values.iter().enumerate().filter(|(_, s)| **s <= tol).map(|(i, _)| vt.row(i).transpose()).collect();
    if cols.is_empty() {
        Mat::zeros(n, 0)
    } else {
        Mat::from_columns(&cols)
    }
}

/// Orthonormal basis of the column space of `m` (rank decided by `tol`
/// relative to the largest singular value).
pub fn column_space(m: &Mat, tol: f64) -> Mat {
    let n = m.nrows();
    if m.ncols() == 0 || n == 0 {
        return Mat::zeros(n, 0);
    }
    let svd = m.clone().svd(true, false);
    let u = svd.u.expect("u requested");
    let smax = svd.singular_values.max();
    let cols: Vec<Vector> = svd.singular_values.iter().enumerate().filter(|(_, s)| **s > tol * smax.max(1e-300) && **s > 0.0).map(|(i, _)| u.column(i).into_owned()).collect();
    if cols.is_empty() {
        Mat::zeros(n, 0)
    } else {
        Mat::from_columns(&cols)
    }
}

pub fn rank(m: &Mat, tol: f64) -> usize {
    column_space(m, tol).ncols()
}

/// Orthonormal basis of the orthogonal complement of the column span of `q`
/// (assumed orthonormal). When every column of `q` is a coordinate vector the
/// complement is the remaining coordinate axes, in increasing order.
pub fn orthonormal_complement(q: &Mat) -> Mat {
    let n = q.nrows();
    let d = q.ncols();
    if let Some(axes) = coordinate_axes(q) {
        let cols: Vec<Vector> = (0..n).filter(|i| !axes.contains(i)).map(|i| unit(n, i)).collect();
        return if cols.is_empty() { Mat::zeros(n, 0) } else { Mat::from_columns(&cols) };
    }
    let proj = Mat::identity(n, n) - q * q.transpose();
    let eig = proj.symmetric_eigen();
    let mut idx: Vec<usize> = (0..n).filter(|&i| eig.eigenvalues[i] > 0.5).collect();
    idx.sort_by(|a, b| eig.eigenvalues[*b].total_cmp(&eig.eigenvalues[*a]).then(a.cmp(b)));
    let cols: Vec<Vector> = idx.iter().map(|&i| eig.eigenvectors.column(i).into_owned()).collect();
    debug_assert_eq!(cols.len(), n - d);
    if cols.is_empty() {
        Mat::zeros(n, 0)
    } else {
        Mat::from_columns(&cols)
    }
}

fn coordinate_axes(q: &Mat) -> Option<Vec<usize>> {
    let mut axes = Vec::with_capacity(q.ncols());
    for c in q.column_iter() {
        let nz: Vec<usize> = (0..c.len()).filter(|&i| c[i] != 0.0).collect();
        if nz.len() != 1 || c[nz[0]].abs() != 1.0 {
            return None;
        }
        axes.push(nz[0]);
    }
    Some(axes)
}

pub fn unit(n: usize, i: usize) -> Vector {
    let mut v = Vector::zeros(n);
    v[i] = 1.0;
    v
}

/// Modified Gram-Schmidt on the given vectors; drops vectors whose residual
/// norm falls below `tol` times their original norm.
pub fn orthonormalize(vectors: &[Vector], tol: f64) -> Mat {
    let n = vectors.first().map_or(0, |v| v.len());
    let mut out: Vec<Vector> = Vec::new();
    for v in vectors {
        let scale = v.norm();
        if scale == 0.0 {
            continue;
        }
        let mut w = v.clone();
        for _ in 0..2 {
            for q in &out {
                let c = q.dot(&w);
                w -= q * c;
            }
        }
        let r = w.norm();
        if r > tol * scale {
            out.push(w / r);
        }
    }
    if out.is_empty() {
        Mat::zeros(n, 0)
    } else {
        Mat::from_columns(&out)
    }
}

/// Dimension of the intersection of two column spans, via
/// dim(U ∩ W) = dim U + dim W − dim(U + W).
pub fn intersection_dim(u: &Mat, w: &Mat, tol: f64) -> usize {
    let du = rank(u, tol);
    let dw = rank(w, tol);
    if du == 0 || dw == 0 {
        return 0;
    }
    let mut joined = Mat::zeros(u.nrows(), u.ncols() + w.ncols());
    joined.view_mut((0, 0), (u.nrows(), u.ncols())).copy_from(u);
    joined.view_mut((0, u.ncols()), (w.nrows(), w.ncols())).copy_from(w);
    (du + dw).saturating_sub(rank(&joined, tol))
}

/// Smallest right singular vectors of a complex square matrix together with
/// the singular values (ascending).
pub fn smallest_singular_vectors(m: &CMat, count: usize) -> (Vec<f64>, Vec<DVector<Complex64>>) {
    let svd = m.clone().svd(false, true);
    let vt = svd.v_t.expect("v_t requested");
    let n = svd.singular_values.len();
    let mut vals = Vec::new();
    let mut vecs = Vec::new();
    for k in 0..count.min(n) {
        let i = n - 1 - k;
        vals.push(svd.singular_values[i]);
        vecs.push(vt.row(i).adjoint());
    }
    (vals, vecs)
}

pub fn to_complex(m: &Mat) -> CMat {
    m.map(|v| Complex64::new(v, 0.0))
}

/// Matrix exponential (Padé approximant with scaling and squaring).
pub fn expm(m: &Mat) -> Mat {
    if m.is_empty() {
        return m.clone();
    }
    m.exp()
}

//! Sparse ordered bilinear maps B(x, y) stored as coordinate triplets.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// Relative tolerance used by the algebraic identity checks.
pub const IDENTITY_TOL: f64 = 1e-12;

/// Outcome of a structural check: the worst residual seen and the tolerance it
/// was compared against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub passed: bool,
    pub max_residual: f64,
    pub tolerance: f64,
}

impl Check {
    pub fn new(max_residual: f64, tolerance: f64) -> Self {
        Check { passed: max_residual <= tolerance, max_residual, tolerance }
    }
}

/// Component `i` of B(x, y) accumulates `value * x[j] * y[k]` for every entry.
#[derive(Debug, Clone, PartialEq)]
pub struct BilinearTensor {
    dim: usize,
    // sorted by (i, j, k), no duplicates, no zero values
    entries: Vec<(usize, usize, usize, f64)>,
}

impl BilinearTensor {
    pub fn new(dim: usize, entries: impl IntoIterator<Item = (usize, usize, usize, f64)>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidTensor("dimension must be positive".into()));
        }
        let mut merged: BTreeMap<(usize, usize, usize), f64> = BTreeMap::new();
        for (i, j, k, v) in entries {
            if i >= dim || j >= dim || k >= dim {
                return Err(Error::InvalidTensor(format!("index ({i},{j},{k}) out of range for dim {dim}")));
            }
            if !v.is_finite() {
                return Err(Error::InvalidTensor(format!("non-finite value at ({i},{j},{k})")));
            }
            *merged.entry((i, j, k)).or_insert(0.0) += v;
        }
        let entries = merged.into_iter().filter(|(_, v)| *v != 0.0).map(|((i, j, k), v)| (i, j, k, v)).collect();
        Ok(BilinearTensor { dim, entries })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[(usize, usize, usize, f64)] {
        &self.entries
    }

    pub fn max_abs_entry(&self) -> f64 {
        self.entries.iter().fold(0.0, |m, e| m.max(e.3.abs()))
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim, x.len())?;
        check_dim(self.dim, y.len())?;
        let mut out = vec![0.0; self.dim];
        self.eval_into(x, y, &mut out);
        Ok(out)
    }

    /// Unchecked hot-path evaluation; `out` is overwritten.
    pub fn eval_into(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for &(i, j, k, v) in &self.entries {
            out[i] += v * x[j] * y[k];
        }
    }

    /// B(x, y) + B(y, x), written into `out`.
    pub fn sym_eval_into(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for &(i, j, k, v) in &self.entries {
            out[i] += v * (x[j] * y[k] + y[j] * x[k]);
        }
    }

    /// Serialize in the plain-text interchange format.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "dim {}", self.dim).unwrap();
        for &(i, j, k, v) in &self.entries {
            writeln!(s, "{i} {j} {k} {v:?}").unwrap();
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        Self::from_lines(text.lines().enumerate().map(|(i, l)| (i + 1, l)))
    }

    pub(crate) fn from_lines<'a>(lines: impl IntoIterator<Item = (usize, &'a str)>) -> Result<Self> {
        let mut dim = None;
        let mut entries = Vec::new();
        for (lineno, raw) in lines {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parse_err = |msg: &str| Error::Parse { line: lineno, msg: msg.to_string() };
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields[0] == "dim" {
                if fields.len() != 2 || dim.is_some() {
                    return Err(parse_err("expected a single `dim n` header"));
                }
                dim = Some(fields[1].parse::<usize>().map_err(|_| parse_err("bad dimension"))?);
                continue;
            }
            if dim.is_none() {
                return Err(parse_err("entry before `dim` header"));
            }
            if fields.len() != 4 {
                return Err(parse_err("expected `i j k value`"));
            }
            let idx = |s: &str| s.parse::<usize>().map_err(|_| parse_err("bad index"));
            let v = fields[3].parse::<f64>().map_err(|_| parse_err("bad value"))?;
            entries.push((idx(fields[0])?, idx(fields[1])?, idx(fields[2])?, v));
        }
        let dim = dim.ok_or(Error::Parse { line: 0, msg: "missing `dim` header".into() })?;
        Self::new(dim, entries)
    }
}

/// Symbolic check of x·B(x,x) = 0: every entry contributes `value` to the
/// monomial x_i x_j x_k; the coefficients of all distinct monomials must vanish.
pub fn energy_residual_certificate(tensor: &BilinearTensor) -> Check {
    let mut coeffs: BTreeMap<[usize; 3], f64> = BTreeMap::new();
    for &(i, j, k, v) in tensor.entries() {
        let mut key = [i, j, k];
        key.sort_unstable();
        *coeffs.entry(key).or_insert(0.0) += v;
    }
    let max = coeffs.values().fold(0.0f64, |m, c| m.max(c.abs()));
    Check::new(max, IDENTITY_TOL * tensor.max_abs_entry())
}

/// max |x·B(x,x)|/|x|³ over Gaussian sample points, against 1e−12.
pub fn sampled_conservation_check(tensor: &BilinearTensor, samples: usize, seed: u64) -> Check {
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};
    let n = tensor.dim();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let (mut x, mut b) = (vec![0.0; n], vec![0.0; n]);
    let mut worst = 0.0f64;
    for _ in 0..samples {
        x.iter_mut().for_each(|v| *v = StandardNormal.sample(&mut rng));
        tensor.eval_into(&x, &x, &mut b);
        let r: f64 = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let dot: f64 = x.iter().zip(&b).map(|(a, c)| a * c).sum();
        worst = worst.max(dot.abs() / (r * r * r));
    }
    Check::new(worst, IDENTITY_TOL)
}

/// Read a dense row-major CSV matrix.
pub fn matrix_from_csv(text: &str) -> Result<nalgebra::DMatrix<f64>> {
    matrix_from_lines(text.lines().enumerate().map(|(i, l)| (i + 1, l)))
}

pub(crate) fn matrix_from_lines<'a>(lines: impl IntoIterator<Item = (usize, &'a str)>) -> Result<nalgebra::DMatrix<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, raw) in lines {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| Error::Parse { line: lineno, msg: "bad CSV number".into() })?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(Error::Parse { line: lineno, msg: "ragged CSV row".into() });
            }
        }
        rows.push(row);
    }
    let ncols = rows.first().map_or(0, |r| r.len());
    Ok(nalgebra::DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

pub fn matrix_to_csv(m: &nalgebra::DMatrix<f64>) -> String {
    let mut s = String::new();
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| format!("{:?}", m[(i, j)])).collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}

//! Concrete models: the stochastic triad (plain and rotated), Lorenz-96, the
//! Sabra shell model in real variables and the 2-D Galerkin Navier-Stokes
//! vorticity equation.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::{self, Mat, Vector};
use crate::system::{DampingOperator, KernelDecomposition, NoiseOperator, SdeSystem};
use crate::tensor::BilinearTensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Triad,
    TriadRotated,
    Lorenz96,
    Sabra,
    GalerkinNs2d,
}

impl Variant {
    pub fn as_str(&self) -> &'static str {
        match self {
            Variant::Triad => "triad",
            Variant::TriadRotated => "triad_rotated",
            Variant::Lorenz96 => "lorenz96",
            Variant::Sabra => "sabra",
            Variant::GalerkinNs2d => "galerkin_ns2d",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "triad" => Variant::Triad,
            "triad_rotated" => Variant::TriadRotated,
            "lorenz96" => Variant::Lorenz96,
            "sabra" => Variant::Sabra,
            "galerkin_ns2d" => Variant::GalerkinNs2d,
            _ => return Err(Error::InvalidModel(format!("unknown variant `{s}`"))),
        })
    }
}

/// A variant plus its string-valued parameters. Unset parameters take the
/// documented defaults of the corresponding builder.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub variant: Variant,
    pub params: BTreeMap<String, String>,
}

impl ModelSpec {
    pub fn new(variant: Variant) -> Self {
        ModelSpec { variant, params: BTreeMap::new() }
    }

    pub fn with(mut self, key: &str, value: impl ToString) -> Self {
        self.params.insert(key.to_string(), value.to_string());
        self
    }

    fn known_keys(&self) -> &'static [&'static str] {
        match self.variant {
            Variant::Triad => &["kernel", "sigma"],
            Variant::TriadRotated => &["sigma"],
            Variant::Lorenz96 => &["n", "a", "q"],
            Variant::Sabra => &["J", "delta", "c", "q", "p"],
            Variant::GalerkinNs2d => &["N", "l", "k", "damping", "sigma"],
        }
    }

    fn get<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        match self.params.get(key) {
            None => Ok(default),
            Some(v) => v.trim().parse().map_err(|_| Error::InvalidModel(format!("bad value `{v}` for parameter `{key}`"))),
        }
    }

    /// Comma-separated list, a single value broadcast to `len`, or `default`.
    fn list(&self, key: &str, len: usize, default: impl Fn(usize) -> f64) -> Result<Vec<f64>> {
        let Some(raw) = self.params.get(key) else {
            return Ok((0..len).map(default).collect());
        };
        let vals = raw
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| Error::InvalidModel(format!("bad list `{raw}` for parameter `{key}`")))?;
        match vals.len() {
            1 => Ok(vec![vals[0]; len]),
            l if l == len => Ok(vals),
            l => Err(Error::InvalidModel(format!("parameter `{key}` has {l} values, expected {len}"))),
        }
    }

    pub fn build(&self) -> Result<SdeSystem> {
        for k in self.params.keys() {
            if !self.known_keys().contains(&k.as_str()) {
                return Err(Error::InvalidModel(format!("unknown parameter `{k}` for {}", self.variant)));
            }
        }
        match self.variant {
            Variant::Triad => {
                let kernel: TriadKernel = self.get("kernel", TriadKernel::Axis3)?;
                build_triad(kernel, self.get("sigma", 1.0)?)
            }
            Variant::TriadRotated => build_triad_rotated(self.get("sigma", 1.0)?),
            Variant::Lorenz96 => {
                let n: usize = self.get("n", 6)?;
                let a = self.list("a", n, |j| if j < 2 { 0.0 } else { 1.0 })?;
                let q = self.list("q", n, |_| 1.0)?;
                build_lorenz96(n, &a, &q)
            }
            Variant::Sabra => {
                let j: usize = self.get("J", 4)?;
                let delta = self.get("delta", 0.5)?;
                let c = self.list("c", j, |m| if m < 2 { 0.0 } else { 1.0 })?;
                let q = self.list("q", j, |_| 1.0)?;
                let p = self.list("p", j, |_| 1.0)?;
                build_sabra(j, delta, &c, &q, &p)
            }
            Variant::GalerkinNs2d => {
                let damping: NsDamping = self.get("damping", NsDamping::Laplacian)?;
                build_galerkin_ns2d(self.get("N", 3)?, (self.get("l", 2)?, self.get("k", 3)?), damping, self.get("sigma", 1.0)?)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TriadKernel {
    /// span{e₃}
    Axis3,
    /// span{(1,1,1)/√3}
    Diagonal,
    /// the plane {x₁ = x₂}
    Plane,
    /// A = I
    Trivial,
}

impl FromStr for TriadKernel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "e3" => TriadKernel::Axis3,
            "diag" => TriadKernel::Diagonal,
            "plane" => TriadKernel::Plane,
            "none" => TriadKernel::Trivial,
            _ => return Err(Error::InvalidModel(format!("unknown triad kernel `{s}` (e3, diag, plane, none)"))),
        })
    }
}

impl TriadKernel {
    fn as_str(&self) -> &'static str {
        match self {
            TriadKernel::Axis3 => "e3",
            TriadKernel::Diagonal => "diag",
            TriadKernel::Plane => "plane",
            TriadKernel::Trivial => "none",
        }
    }
}

/// B(x,x) = (x₂x₃, x₁x₃, −2x₁x₂).
pub fn triad_tensor() -> BilinearTensor {
    BilinearTensor::new(3, [(0, 1, 2, 1.0), (1, 0, 2, 1.0), (2, 0, 1, -2.0)]).expect("static tensor")
}

/// B(x,y) = (x₁y₃, −x₂y₃, (x₂ − x₁)(y₂ + y₁)).
pub fn triad_rotated_tensor() -> BilinearTensor {
    BilinearTensor::new(3, [(0, 0, 2, 1.0), (1, 1, 2, -1.0), (2, 1, 1, 1.0), (2, 1, 0, 1.0), (2, 0, 1, -1.0), (2, 0, 0, -1.0)]).expect("static tensor")
}

/// Triad with A the orthogonal projector onto the complement of the chosen
/// kernel and σ = sigma·I.
pub fn build_triad(kernel: TriadKernel, sigma: f64) -> Result<SdeSystem> {
    let s3 = 1.0 / 3f64.sqrt();
    let s2 = 1.0 / 2f64.sqrt();
    let basis: Vec<Vector> = match kernel {
        TriadKernel::Axis3 => vec![linalg::unit(3, 2)],
        TriadKernel::Diagonal => vec![Vector::from_column_slice(&[s3, s3, s3])],
        TriadKernel::Plane => vec![Vector::from_column_slice(&[s2, s2, 0.0]), linalg::unit(3, 2)],
        TriadKernel::Trivial => vec![],
    };
    let a = match kernel {
        TriadKernel::Axis3 => Mat::from_diagonal(&Vector::from_column_slice(&[1.0, 1.0, 0.0])),
        TriadKernel::Trivial => Mat::identity(3, 3),
        _ => {
            let q = Mat::from_columns(&basis);
            let p = Mat::identity(3, 3) - &q * q.transpose();
            (&p + p.transpose()) * 0.5
        }
    };
    let damping = DampingOperator::new(a)?;
    let dec = KernelDecomposition::with_basis(&damping, &basis, None)?;
    let noise = NoiseOperator::new(Mat::identity(3, 3) * sigma)?;
    Ok(SdeSystem::new("triad", triad_tensor(), damping, noise, Some(dec))?.with_meta("variant", "triad").with_meta("kernel", kernel.as_str()))
}

/// Rotated triad with ker A = {x₂ = 0}, A = diag(0,1,0), σ = sigma·I.
pub fn build_triad_rotated(sigma: f64) -> Result<SdeSystem> {
    let damping = DampingOperator::diagonal(&[0.0, 1.0, 0.0])?;
    let noise = NoiseOperator::new(Mat::identity(3, 3) * sigma)?;
    Ok(SdeSystem::new("triad_rotated", triad_rotated_tensor(), damping, noise, None)?.with_meta("variant", "triad_rotated").with_meta("kernel", "plane"))
}

/// B_j(x,y) = x_{j−1}(y_{j+1} − y_{j−2}) with periodic indices, so that
/// B_j(x,x) = (x_{j+1} − x_{j−2}) x_{j−1}.
pub fn lorenz96_tensor(n: usize) -> Result<BilinearTensor> {
    if n < 4 {
        return Err(Error::InvalidModel(format!("lorenz96 needs n >= 4, got {n}")));
    }
    let mut e = Vec::with_capacity(2 * n);
    for j in 0..n {
        let (jm1, jp1, jm2) = ((j + n - 1) % n, (j + 1) % n, (j + n - 2) % n);
        e.push((j, jm1, jp1, 1.0));
        e.push((j, jm1, jm2, -1.0));
    }
    BilinearTensor::new(n, e)
}

pub fn build_lorenz96(n: usize, a: &[f64], q: &[f64]) -> Result<SdeSystem> {
    let tensor = lorenz96_tensor(n)?;
    if a.len() != n || q.len() != n {
        return Err(Error::InvalidModel("lorenz96 damping and noise lists must have length n".into()));
    }
    if a.iter().any(|v| *v < 0.0) {
        return Err(Error::InvalidModel("lorenz96 damping coefficients must be >= 0".into()));
    }
    let damping = DampingOperator::diagonal(a)?;
    let noise = NoiseOperator::diagonal(q)?;
    Ok(SdeSystem::new("lorenz96", tensor, damping, noise, None)?.with_meta("variant", "lorenz96").with_meta("n", n).with_meta("a", join(a)).with_meta("q", join(q)))
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(",")
}

/// Sabra tensor in real variables (a₁..a_J, b₁..b_J) with shells u_m = a_m + i b_m
/// and zero boundary shells.
pub fn sabra_tensor(shells: usize, delta: f64) -> Result<BilinearTensor> {
    if shells < 4 {
        return Err(Error::InvalidModel(format!("sabra needs J >= 4, got {shells}")));
    }
    if !(delta > 0.0 && delta < 2.0 && delta != 1.0) {
        return Err(Error::InvalidModel(format!("sabra needs delta in (0,2) without 1, got {delta}")));
    }
    let j = shells as i64;
    let a = |m: i64| (1..=j).contains(&m).then(|| (m - 1) as usize);
    let b = |m: i64| (1..=j).contains(&m).then(|| (j + m - 1) as usize);
    let mut e = Vec::new();
    let mut push = |i: Option<usize>, x: Option<usize>, y: Option<usize>, v: f64| {
        if let (Some(i), Some(x), Some(y)) = (i, x, y) {
            e.push((i, x, y, v));
        }
    };
    for m in 1..=j {
        let p0 = 2f64.powi(m as i32);
        let p1 = delta * 2f64.powi(m as i32 - 1);
        let p2 = (delta - 1.0) * 2f64.powi(m as i32 - 2);
        push(a(m), a(m + 2), b(m + 1), p0);
        push(a(m), a(m + 1), b(m + 2), -p0);
        push(a(m), a(m - 1), b(m + 1), p1);
        push(a(m), a(m + 1), b(m - 1), -p1);
        push(a(m), a(m - 2), b(m - 1), p2);
        push(a(m), a(m - 1), b(m - 2), p2);
        push(b(m), a(m + 1), a(m + 2), p0);
        push(b(m), b(m + 1), b(m + 2), p0);
        push(b(m), a(m - 1), a(m + 1), -p1);
        push(b(m), b(m + 1), b(m - 1), -p1);
        push(b(m), a(m - 2), a(m - 1), -p2);
        push(b(m), b(m - 1), b(m - 2), p2);
    }
    BilinearTensor::new(2 * shells, e)
}

/// Sabra with A = δ·diag(2^{2m} c_m) on both a and b blocks and
/// σ = diag(q₁..q_J, p₁..p_J). When exactly two shells are undamped the
/// kernel carries the V₁/V₂ split by shell.
pub fn build_sabra(shells: usize, delta: f64, c: &[f64], q: &[f64], p: &[f64]) -> Result<SdeSystem> {
    let tensor = sabra_tensor(shells, delta)?;
    if c.len() != shells || q.len() != shells || p.len() != shells {
        return Err(Error::InvalidModel("sabra lists c, q, p must have length J".into()));
    }
    if c.iter().any(|v| *v < 0.0) {
        return Err(Error::InvalidModel("sabra damping mask must be >= 0".into()));
    }
    let n = 2 * shells;
    let mut diag = vec![0.0; n];
    for m in 0..shells {
        let v = delta * 4f64.powi(m as i32 + 1) * c[m];
        diag[m] = v;
        diag[shells + m] = v;
    }
    let damping = DampingOperator::diagonal(&diag)?;
    let free: Vec<usize> = (0..shells).filter(|&m| c[m] == 0.0).collect();
    let dec = if free.len() == 2 {
        let basis: Vec<Vector> = free.iter().flat_map(|&m| [linalg::unit(n, m), linalg::unit(n, shells + m)]).collect();
        Some(KernelDecomposition::with_basis(&damping, &basis, Some(2))?)
    } else {
        None
    };
    let sig: Vec<f64> = q.iter().chain(p).copied().collect();
    let noise = NoiseOperator::diagonal(&sig)?;
    Ok(SdeSystem::new("sabra", tensor, damping, noise, dec)?.with_meta("variant", "sabra").with_meta("J", shells).with_meta("delta", format!("{delta:?}")).with_meta("c", join(c)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NsDamping {
    /// A = −Δ on the non-kernel modes
    Laplacian,
    /// A = 1 on the non-kernel modes
    Unit,
}

impl FromStr for NsDamping {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "laplacian" => Ok(NsDamping::Laplacian),
            "unit" => Ok(NsDamping::Unit),
            _ => Err(Error::InvalidModel(format!("unknown ns damping `{s}` (laplacian, unit)"))),
        }
    }
}

/// Half-plane representatives p with 0 < |p|_∞ ≤ N (p₁ > 0, or p₁ = 0 and
/// p₂ > 0), in lexicographic order. Mode r owns the real coordinates 2r
/// (cos p·x) and 2r+1 (sin p·x).
pub fn ns_modes(truncation: usize) -> Vec<(i64, i64)> {
    let n = truncation as i64;
    let mut modes = Vec::new();
    for p1 in 0..=n {
        for p2 in -n..=n {
            if p1 > 0 || p2 > 0 {
                modes.push((p1, p2));
            }
        }
    }
    modes
}

/// Galerkin vorticity nonlinearity in the real cos/sin basis:
/// B̂(w, w̃)_p = −Σ_{q+q′=p} (q^⊥·q′)/|q|² ŵ_q w̃̂_{q′}, q^⊥ = (−q₂, q₁),
/// truncated to |·|_∞ ≤ N. A real field w = Σ c_p cos(p·x) + s_p sin(p·x)
/// has ŵ_p = (c_p − i s_p)/2 and ŵ_{−p} = (c_p + i s_p)/2.
pub fn ns_tensor(truncation: usize) -> Result<BilinearTensor> {
    let modes = ns_modes(truncation);
    let n = truncation as i64;
    let index: BTreeMap<(i64, i64), usize> = modes.iter().enumerate().map(|(r, p)| (*p, r)).collect();
    // ŵ_q as a combination of real coordinates
    let coeffs = |q: (i64, i64)| -> [(usize, Complex64); 2] {
        if let Some(&r) = index.get(&q) {
            [(2 * r, Complex64::new(0.5, 0.0)), (2 * r + 1, Complex64::new(0.0, -0.5))]
        } else {
            let r = index[&(-q.0, -q.1)];
            [(2 * r, Complex64::new(0.5, 0.0)), (2 * r + 1, Complex64::new(0.0, 0.5))]
        }
    };
    let mut entries = Vec::new();
    for (r, &p) in modes.iter().enumerate() {
        for q1 in -n..=n {
            for q2 in -n..=n {
                let q = (q1, q2);
                let qq = (p.0 - q1, p.1 - q2);
                if q == (0, 0) || qq == (0, 0) || qq.0.abs() > n || qq.1.abs() > n {
                    continue;
                }
                let cross = (-q.1 * qq.0 + q.0 * qq.1) as f64;
                if cross == 0.0 {
                    continue;
                }
                let kappa = -cross / (q.0 * q.0 + q.1 * q.1) as f64;
                for (j, alpha) in coeffs(q) {
                    for (k, beta) in coeffs(qq) {
                        let z = alpha * beta * kappa;
                        entries.push((2 * r, j, k, 2.0 * z.re));
                        entries.push((2 * r + 1, j, k, -2.0 * z.im));
                    }
                }
            }
        }
    }
    balance_monomials(&BilinearTensor::new(2 * modes.len(), entries)?)
}

/// The NS coefficients are rationals with different denominators, so their
/// rounded values need not cancel exactly. Within each monomial x_i x_j x_k
/// the last stored entry absorbs a rounding-level defect, making the binary64
/// coefficient sums exactly zero; genuine defects are left alone.
fn balance_monomials(t: &BilinearTensor) -> Result<BilinearTensor> {
    let tol = 1e-12 * t.max_abs_entry();
    let mut groups: BTreeMap<[usize; 3], Vec<usize>> = BTreeMap::new();
    for (e, &(i, j, k, _)) in t.entries().iter().enumerate() {
        let mut key = [i, j, k];
        key.sort_unstable();
        groups.entry(key).or_default().push(e);
    }
    let mut entries = t.entries().to_vec();
    for idx in groups.values() {
        let (last, rest) = idx.split_last().expect("non-empty group");
        let partial = rest.iter().fold(0.0, |acc, &e| acc + entries[e].3);
        if (partial + entries[*last].3).abs() <= tol {
            entries[*last].3 = -partial;
        }
    }
    BilinearTensor::new(t.dim(), entries)
}

/// Galerkin Navier-Stokes on T² with kernel V₁ = span(cos ℓx₁, sin ℓx₁),
/// V₂ = span(cos kx₂, sin kx₂) and σ = sigma·I.
pub fn build_galerkin_ns2d(truncation: usize, shear: (usize, usize), damping: NsDamping, sigma: f64) -> Result<SdeSystem> {
    let (l, k) = shear;
    if truncation < 3 || l < 2 || k < 2 || l == k || l > truncation || k > truncation {
        return Err(Error::InvalidModel(format!("galerkin_ns2d needs N >= 3 and 2 <= l != k <= N, got N={truncation}, l={l}, k={k}")));
    }
    let tensor = ns_tensor(truncation)?;
    let modes = ns_modes(truncation);
    let dim = 2 * modes.len();
    let r1 = modes.iter().position(|&p| p == (l as i64, 0)).expect("shear mode present");
    let r2 = modes.iter().position(|&p| p == (0, k as i64)).expect("shear mode present");
    let mut diag = vec![0.0; dim];
    for (r, p) in modes.iter().enumerate() {
        if r == r1 || r == r2 {
            continue;
        }
        let v = match damping {
            NsDamping::Laplacian => (p.0 * p.0 + p.1 * p.1) as f64,
            NsDamping::Unit => 1.0,
        };
        diag[2 * r] = v;
        diag[2 * r + 1] = v;
    }
    let damping_op = DampingOperator::diagonal(&diag)?;
    let basis = [linalg::unit(dim, 2 * r1), linalg::unit(dim, 2 * r1 + 1), linalg::unit(dim, 2 * r2), linalg::unit(dim, 2 * r2 + 1)];
    let dec = KernelDecomposition::with_basis(&damping_op, &basis, Some(2))?;
    let noise = NoiseOperator::new(Mat::identity(dim, dim) * sigma)?;
    Ok(SdeSystem::new("galerkin_ns2d", tensor, damping_op, noise, Some(dec))?.with_meta("variant", "galerkin_ns2d").with_meta("N", truncation).with_meta("l", l).with_meta("k", k))
}

/// Real coordinate index of cos(p·x) (sin is the next one) for a half-plane mode.
pub fn ns_coordinate(truncation: usize, p: (i64, i64)) -> Option<usize> {
    ns_modes(truncation).iter().position(|&m| m == p).map(|r| 2 * r)
}

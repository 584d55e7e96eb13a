//! Plain-text system files: a metadata header, the tensor in `dim n` /
//! `i j k value` form, then A, σ and the kernel basis as row-major CSV blocks.
//!
//! ```text
//! name triad
//! meta variant triad
//! tensor
//! dim 3
//! 0 1 2 1.0
//! end
//! damping 3 3
//! 0.0,0.0,0.0
//! ...
//! noise 3 3
//! ...
//! kernel 3 1
//! 0.0
//! 0.0
//! 1.0
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::linalg::{Mat, Vector};
use crate::system::{DampingOperator, KernelDecomposition, NoiseOperator, SdeSystem};
use crate::tensor::{matrix_from_lines, matrix_to_csv, BilinearTensor};

pub fn system_to_text(system: &SdeSystem) -> String {
    let mut s = String::new();
    writeln!(s, "name {}", system.name).unwrap();
    for (k, v) in &system.meta {
        writeln!(s, "meta {k} {v}").unwrap();
    }
    s.push_str("tensor\n");
    s.push_str(&system.tensor.to_text());
    s.push_str("end\n");
    let mut block = |label: &str, m: &Mat, extra: &str| {
        writeln!(s, "{label} {} {}{extra}", m.nrows(), m.ncols()).unwrap();
        s.push_str(&matrix_to_csv(m));
    };
    block("damping", system.damping.matrix(), "");
    block("noise", system.noise.matrix(), "");
    let dec = &system.decomposition;
    let extra = dec.split().map(|v| format!(" split {v}")).unwrap_or_default();
    if dec.kernel_dim() > 0 {
        block("kernel", dec.q_ker(), &extra);
    }
    s
}

pub fn system_from_text(text: &str) -> Result<SdeSystem> {
    let lines: Vec<(usize, &str)> = text.lines().enumerate().map(|(i, l)| (i + 1, l)).collect();
    let mut pos = 0;
    let mut name = String::new();
    let mut meta = BTreeMap::new();
    let mut tensor = None;
    let mut damping = None;
    let mut noise = None;
    let mut kernel: Option<(Mat, Option<usize>)> = None;
    let err = |line: usize, msg: &str| Error::Parse { line, msg: msg.to_string() };
    while pos < lines.len() {
        let (lineno, raw) = lines[pos];
        let line = raw.trim();
        pos += 1;
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (head, rest) = line.split_once(' ').unwrap_or((line, ""));
        match head {
            "name" => name = rest.to_string(),
            "meta" => {
                let (k, v) = rest.split_once(' ').unwrap_or((rest, ""));
                meta.insert(k.to_string(), v.to_string());
            }
            "tensor" => {
                let start = pos;
                while pos < lines.len() && lines[pos].1.trim() != "end" {
                    pos += 1;
                }
                if pos == lines.len() {
                    return Err(err(lineno, "tensor block without `end`"));
                }
                tensor = Some(BilinearTensor::from_lines(lines[start..pos].iter().copied())?);
                pos += 1;
            }
            "damping" | "noise" | "kernel" => {
                let f: Vec<&str> = rest.split_whitespace().collect();
                let dims = |i: usize| f.get(i).and_then(|s| s.parse::<usize>().ok()).ok_or_else(|| err(lineno, "bad block size"));
                let (rows, cols) = (dims(0)?, dims(1)?);
                let split = match (f.get(2), f.get(3)) {
                    (Some(&"split"), Some(v)) => Some(v.parse::<usize>().map_err(|_| err(lineno, "bad split"))?),
                    (None, None) => None,
                    _ => return Err(err(lineno, "unexpected block options")),
                };
                if pos + rows > lines.len() {
                    return Err(err(lineno, "truncated matrix block"));
                }
                let m = matrix_from_lines(lines[pos..pos + rows].iter().copied())?;
                if m.nrows() != rows || (rows > 0 && m.ncols() != cols) {
                    return Err(err(lineno, "matrix block size does not match header"));
                }
                pos += rows;
                match head {
                    "damping" => damping = Some(m),
                    "noise" => noise = Some(m),
                    _ => kernel = Some((m, split)),
                }
            }
            _ => return Err(err(lineno, &format!("unknown section `{head}`"))),
        }
    }
    let tensor = tensor.ok_or_else(|| err(0, "missing tensor block"))?;
    let damping = DampingOperator::new(damping.ok_or_else(|| err(0, "missing damping block"))?)?;
    let noise = NoiseOperator::new(noise.ok_or_else(|| err(0, "missing noise block"))?)?;
    let decomposition = match kernel {
        Some((q, split)) => {
            let basis: Vec<Vector> = q.column_iter().map(|c| c.into_owned()).collect();
            Some(KernelDecomposition::with_basis(&damping, &basis, split)?)
        }
        None => None,
    };
    let mut system = SdeSystem::new(name, tensor, damping, noise, decomposition)?;
    system.meta = meta;
    Ok(system)
}

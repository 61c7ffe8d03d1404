//! Kernel functions and Gram matrices.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par::Execution;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum KernelSpec {
    /// `k(x, x') = x . x'`
    Linear,
    /// `k(x, x') = exp(-gamma |x - x'|^2)`
    Gaussian { gamma: f64 },
    /// `k(x, x') = (x . x' + coef0)^degree`
    Polynomial { degree: u32, coef0: f64 },
}

impl KernelSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            KernelSpec::Linear => Ok(()),
            KernelSpec::Gaussian { gamma } if gamma.is_finite() && gamma > 0.0 => Ok(()),
            KernelSpec::Gaussian { gamma } => Err(Error::arg(format!("gaussian kernel needs gamma > 0, got {gamma}"))),
            KernelSpec::Polynomial { degree, coef0 } if degree >= 1 && coef0.is_finite() => Ok(()),
            KernelSpec::Polynomial { degree, coef0 } => Err(Error::arg(format!(
                "polynomial kernel needs degree >= 1 and finite coef0, got ({degree}, {coef0})"
            ))),
        }
    }

    /// Unchecked evaluation; callers guarantee equal dimensions.
    #[inline]
    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), y.len());
        match *self {
            KernelSpec::Linear => dot(x, y),
            KernelSpec::Gaussian { gamma } => {
                let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
                (-gamma * d2).exp()
            }
            KernelSpec::Polynomial { degree, coef0 } => (dot(x, y) + coef0).powi(degree as i32),
        }
    }

    pub fn is_linear(&self) -> bool {
        matches!(self, KernelSpec::Linear)
    }
}

impl fmt::Display for KernelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KernelSpec::Linear => f.write_str("linear"),
            KernelSpec::Gaussian { gamma } => write!(f, "gaussian(gamma={gamma})"),
            KernelSpec::Polynomial { degree, coef0 } => {
                write!(f, "polynomial(degree={degree};coef0={coef0})")
            }
        }
    }
}

#[inline]
pub(crate) fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

/// Checked kernel evaluation.
pub fn kernel_eval(spec: &KernelSpec, x: &[f64], y: &[f64]) -> Result<f64> {
    spec.validate()?;
    if x.len() != y.len() {
        return Err(Error::arg(format!(
            "kernel arguments differ in dimension ({} vs {})",
            x.len(),
            y.len()
        )));
    }
    Ok(spec.eval(x, y))
}

/// `gamma = 1 / (d * var)` with `var` the mean per-feature variance of `points`.
pub fn default_gamma(points: &[Vec<f64>]) -> f64 {
    let d = points.first().map_or(1, |p| p.len()).max(1);
    let n = points.len();
    if n < 2 {
        return 1.0 / d as f64;
    }
    let mut var = 0.0;
    for j in 0..d {
        let mean = points.iter().map(|p| p[j]).sum::<f64>() / n as f64;
        var += points.iter().map(|p| (p[j] - mean).powi(2)).sum::<f64>() / n as f64;
    }
    var /= d as f64;
    if var > 0.0 && var.is_finite() {
        1.0 / (d as f64 * var)
    } else {
        1.0 / d as f64
    }
}

pub(crate) fn check_dims(points: &[Vec<f64>]) -> Result<usize> {
    let d = points.first().map(|p| p.len()).unwrap_or(0);
    if let Some((i, p)) = points.iter().enumerate().find(|(_, p)| p.len() != d) {
        return Err(Error::arg(format!(
            "point {i} has dimension {} (expected {d})",
            p.len()
        )));
    }
    Ok(d)
}

/// Dense symmetric kernel matrix, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct GramMatrix {
    n: usize,
    data: Vec<f64>,
}

impl GramMatrix {
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    /// `K v`.
    pub fn mul_vec(&self, v: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = dot(self.row(i), v);
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

/// Kernel matrix of `points`; entries below the diagonal are mirrored so the
/// result is exactly symmetric.
pub fn gram(spec: &KernelSpec, points: &[Vec<f64>], exec: Execution) -> Result<GramMatrix> {
    spec.validate()?;
    if points.is_empty() {
        return Err(Error::arg("gram matrix of an empty point set"));
    }
    check_dims(points)?;
    let n = points.len();
    let mut data = vec![0.0; n * n];
    exec.for_each_chunk_mut(&mut data, n, |i, row| {
        for j in i..n {
            row[j] = spec.eval(&points[i], &points[j]);
        }
    });
    for i in 0..n {
        for j in 0..i {
            data[i * n + j] = data[j * n + i];
        }
    }
    Ok(GramMatrix { n, data })
}

/// Row-major `rows.len() x cols.len()` matrix of `k(rows[a], cols[b])`.
pub fn cross_kernel(spec: &KernelSpec, rows: &[Vec<f64>], cols: &[Vec<f64>], exec: Execution) -> Vec<f64> {
    let m = cols.len();
    let mut out = vec![0.0; rows.len() * m];
    if m == 0 {
        return out;
    }
    exec.for_each_chunk_mut(&mut out, m, |a, row| {
        for (b, v) in row.iter_mut().enumerate() {
            *v = spec.eval(&rows[a], &cols[b]);
        }
    });
    out
}

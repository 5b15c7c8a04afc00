use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum KernelKind {
    Linear,
    Polynomial,
    Rbf,
}

/// Kernel function with its hyperparameters. `poly_*` only matter for
/// [`KernelKind::Polynomial`], `rbf_gamma` only for [`KernelKind::Rbf`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub kind: KernelKind,
    pub poly_c: f64,
    pub poly_d: u32,
    pub rbf_gamma: f64,
}

impl KernelSpec {
    pub fn linear() -> Self {
        Self {
            kind: KernelKind::Linear,
            poly_c: 0.0,
            poly_d: 1,
            rbf_gamma: 1.0,
        }
    }

    pub fn polynomial(c: f64, d: u32) -> Result<Self> {
        let spec = Self {
            kind: KernelKind::Polynomial,
            poly_c: c,
            poly_d: d,
            rbf_gamma: 1.0,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn rbf(gamma: f64) -> Result<Self> {
        let spec = Self {
            kind: KernelKind::Rbf,
            poly_c: 0.0,
            poly_d: 1,
            rbf_gamma: gamma,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// RBF with `gamma = 1 / (dims * mean per-feature variance)`.
    pub fn rbf_scale(data: &[Vec<f64>]) -> Result<Self> {
        Self::rbf(scale_gamma(data)?)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rbf_gamma.is_finite() && self.rbf_gamma > 0.0) {
            return Err(Error::Precondition(format!("rbf gamma must be > 0, got {}", self.rbf_gamma)));
        }
        if self.poly_d < 1 {
            return Err(Error::Precondition("polynomial degree must be >= 1".into()));
        }
        if !self.poly_c.is_finite() {
            return Err(Error::Precondition("polynomial offset must be finite".into()));
        }
        Ok(())
    }

    /// Kernel value from a precomputed inner product and squared norms.
    #[inline]
    pub(crate) fn from_dot(&self, dot: f64, xx: f64, yy: f64) -> f64 {
        match self.kind {
            KernelKind::Linear => dot,
            KernelKind::Polynomial => (dot + self.poly_c).powi(self.poly_d as i32),
            KernelKind::Rbf => (-self.rbf_gamma * (xx + yy - 2.0 * dot).max(0.0)).exp(),
        }
    }

    #[inline]
    pub(crate) fn eval_unchecked(&self, x: &[f64], y: &[f64]) -> f64 {
        match self.kind {
            KernelKind::Linear => dot(x, y),
            KernelKind::Polynomial => (dot(x, y) + self.poly_c).powi(self.poly_d as i32),
            KernelKind::Rbf => {
                let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
                (-self.rbf_gamma * d2).exp()
            }
        }
    }
}

pub(crate) fn scale_gamma(data: &[Vec<f64>]) -> Result<f64> {
    let first = data
        .first()
        .ok_or_else(|| Error::Precondition("no data for gamma heuristic".into()))?;
    let d = first.len();
    let n = data.len() as f64;
    let mut total_var = 0.0;
    for j in 0..d {
        let mean = data.iter().map(|r| r[j]).sum::<f64>() / n;
        total_var += data.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n;
    }
    let mean_var = total_var / d as f64;
    if mean_var > 0.0 && mean_var.is_finite() {
        Ok(1.0 / (d as f64 * mean_var))
    } else {
        Ok(1.0)
    }
}

#[inline]
pub(crate) fn dot(x: &[f64], y: &[f64]) -> f64 {
    // Four accumulators let the compiler vectorize the reduction.
    let mut acc = [0.0; 4];
    let xc = x.chunks_exact(4);
    let yc = y.chunks_exact(4);
    let (xr, yr) = (xc.remainder(), yc.remainder());
    for (a, b) in xc.zip(yc) {
        acc[0] += a[0] * b[0];
        acc[1] += a[1] * b[1];
        acc[2] += a[2] * b[2];
        acc[3] += a[3] * b[3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (a, b) in xr.iter().zip(yr) {
        s += a * b;
    }
    s
}

/// `K(x, y)` for the given kernel.
pub fn kernel_eval(spec: &KernelSpec, x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Dimension {
            expected: x.len(),
            actual: y.len(),
        });
    }
    Ok(spec.eval_unchecked(x, y))
}

/// Dense `n x n` Gram matrix of row-major `rows`, computed through one GEMM.
pub(crate) fn gram_matrix(spec: &KernelSpec, rows: &[Vec<f64>]) -> Vec<f64> {
    let n = rows.len();
    let d = rows.first().map_or(0, Vec::len);
    let flat: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
    let mut g = vec![0.0; n * n];
    if n > 0 && d > 0 {
        // SAFETY: buffers hold n*d and n*n elements with the given strides.
        unsafe {
            matrixmultiply::dgemm(
                n,
                d,
                n,
                1.0,
                flat.as_ptr(),
                d as isize,
                1,
                flat.as_ptr(),
                1,
                d as isize,
                0.0,
                g.as_mut_ptr(),
                n as isize,
                1,
            );
        }
    }
    let norms: Vec<f64> = (0..n).map(|i| g[i * n + i]).collect();
    for i in 0..n {
        for j in 0..n {
            let v = &mut g[i * n + j];
            *v = spec.from_dot(*v, norms[i], norms[j]);
        }
    }
    // Exact symmetry and unit RBF diagonal regardless of GEMM rounding.
    for i in 0..n {
        for j in 0..i {
            g[j * n + i] = g[i * n + j];
        }
        if spec.kind == KernelKind::Rbf {
            g[i * n + i] = 1.0;
        }
    }
    g
}

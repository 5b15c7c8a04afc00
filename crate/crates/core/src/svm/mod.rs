//! Soft-margin kernel SVM: kernels, SMO training and one-vs-one voting.

mod kernel;
pub mod smo;

pub use kernel::{kernel_eval, KernelKind, KernelSpec};
pub(crate) use kernel::dot;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Solver settings shared by binary and multiclass training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvmParams {
    pub c: f64,
    pub tol: f64,
    /// Iteration budget, in units of the training-set size.
    pub max_passes: usize,
    pub seed: u64,
}

impl Default for SvmParams {
    fn default() -> Self {
        Self {
            c: 1.0,
            tol: 1e-3,
            max_passes: 200,
            seed: 42,
        }
    }
}

/// Trained two-class machine, `f(x) = sum_i coef_i K(sv_i, x) + bias` with
/// `coef_i = alpha_i y_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct BinarySvm {
    pub kernel: KernelSpec,
    pub c: f64,
    pub support_vectors: Vec<Vec<f64>>,
    pub coef: Vec<f64>,
    pub bias: f64,
    linear_w: Option<Vec<f64>>,
}

/// Diagnostics from one SMO run.
#[derive(Debug, Clone)]
pub struct TrainReport {
    /// Multiplier of every training point, support vector or not.
    pub alpha: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub gap: f64,
    pub converged: bool,
}

impl BinarySvm {
    pub fn new(kernel: KernelSpec, c: f64, support_vectors: Vec<Vec<f64>>, coef: Vec<f64>, bias: f64) -> Self {
        let linear_w = (kernel.kind == KernelKind::Linear).then(|| {
            let d = support_vectors.first().map_or(0, Vec::len);
            let mut w = vec![0.0; d];
            for (sv, a) in support_vectors.iter().zip(&coef) {
                for (wj, xj) in w.iter_mut().zip(sv) {
                    *wj += a * xj;
                }
            }
            w
        });
        Self {
            kernel,
            c,
            support_vectors,
            coef,
            bias,
            linear_w,
        }
    }

    /// Primal weight vector; only defined for the linear kernel.
    pub fn weights(&self) -> Option<&[f64]> {
        self.linear_w.as_deref()
    }

    pub fn dims(&self) -> usize {
        self.support_vectors.first().map_or(0, Vec::len)
    }

    pub fn decision_value(&self, x: &[f64]) -> f64 {
        if let Some(w) = &self.linear_w {
            if !w.is_empty() {
                return dot(w, x) + self.bias;
            }
        }
        self.support_vectors
            .iter()
            .zip(&self.coef)
            .map(|(sv, a)| a * self.kernel.eval_unchecked(sv, x))
            .sum::<f64>()
            + self.bias
    }
}

fn check_binary(x: &[Vec<f64>], y: &[f64], params: &SvmParams) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::Dimension {
            expected: x.len(),
            actual: y.len(),
        });
    }
    if !(params.c > 0.0 && params.c.is_finite()) {
        return Err(Error::Precondition(format!("C must be > 0, got {}", params.c)));
    }
    if let Some(bad) = y.iter().find(|&&v| v != 1.0 && v != -1.0) {
        return Err(Error::Precondition(format!("labels must be +1/-1, got {bad}")));
    }
    if !(y.contains(&1.0) && y.contains(&-1.0)) {
        return Err(Error::DegenerateData("binary SVM needs both classes".into()));
    }
    let d = x[0].len();
    for row in x {
        if row.len() != d {
            return Err(Error::Dimension {
                expected: d,
                actual: row.len(),
            });
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("non-finite feature".into()));
        }
    }
    Ok(())
}

/// Trains a binary machine with labels in `{-1, +1}`.
pub fn train_binary(x: &[Vec<f64>], y: &[f64], kernel: &KernelSpec, params: &SvmParams) -> Result<BinarySvm> {
    train_binary_with_report(x, y, kernel, params).map(|(m, _)| m)
}

pub fn train_binary_with_report(
    x: &[Vec<f64>],
    y: &[f64],
    kernel: &KernelSpec,
    params: &SvmParams,
) -> Result<(BinarySvm, TrainReport)> {
    kernel.validate()?;
    check_binary(x, y, params)?;
    // Working-set selection is deterministic, so `params.seed` has nothing to
    // perturb here; it is kept so every model shares one parameter shape.
    let max_iter = params.max_passes.saturating_mul(x.len().max(1000));
    let sol = smo::solve(kernel, x, y, params.c, params.tol, max_iter);
    let mut svs = Vec::new();
    let mut coef = Vec::new();
    for (i, &a) in sol.alpha.iter().enumerate() {
        if a > 0.0 {
            svs.push(x[i].clone());
            coef.push(a * y[i]);
        }
    }
    let machine = BinarySvm::new(*kernel, params.c, svs, coef, sol.bias);
    let report = TrainReport {
        alpha: sol.alpha,
        objective: sol.objective,
        iterations: sol.iterations,
        gap: sol.gap,
        converged: sol.converged,
    };
    Ok((machine, report))
}

/// Largest KKT violation of `machine` over the training set, measured on
/// `y_i f(x_i)` against the active constraint implied by `alpha_i`.
pub fn max_kkt_violation(machine: &BinarySvm, x: &[Vec<f64>], y: &[f64], alpha: &[f64]) -> f64 {
    let c = machine.c;
    let mut worst: f64 = 0.0;
    for ((xi, &yi), &a) in x.iter().zip(y).zip(alpha) {
        let m = yi * machine.decision_value(xi) - 1.0;
        let v = if a <= 0.0 {
            (-m).max(0.0)
        } else if a >= c {
            m.max(0.0)
        } else {
            m.abs()
        };
        worst = worst.max(v);
    }
    worst
}

pub const CLASS_PAIRS: [(usize, usize); 3] = [(0, 1), (0, 2), (1, 2)];

/// One-vs-one machines for three classes, ordered as [`CLASS_PAIRS`]. Each
/// machine scores its first class positive.
#[derive(Debug, Clone, PartialEq)]
pub struct MulticlassSvm {
    pub machines: Vec<BinarySvm>,
}

impl MulticlassSvm {
    pub fn decision_values(&self, x: &[f64]) -> [f64; 3] {
        let mut out = [0.0; 3];
        for (o, m) in out.iter_mut().zip(&self.machines) {
            *o = m.decision_value(x);
        }
        out
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        vote(&self.decision_values(x))
    }
}

/// Majority vote over the pairwise decisions. A tie between classes goes to
/// the one whose winning decisions have the larger total `|value|`, then to the
/// lower class index.
pub fn vote(decisions: &[f64; 3]) -> usize {
    let mut votes = [0usize; 3];
    let mut margin = [0.0f64; 3];
    for (&(a, b), &d) in CLASS_PAIRS.iter().zip(decisions) {
        let winner = if d >= 0.0 { a } else { b };
        votes[winner] += 1;
        margin[winner] += d.abs();
    }
    let top = *votes.iter().max().expect("three classes");
    let mut best = usize::MAX;
    for c in 0..3 {
        if votes[c] == top && (best == usize::MAX || margin[c] > margin[best]) {
            best = c;
        }
    }
    best
}

/// Trains the three pairwise machines. `labels` are class indices in `0..3`.
pub fn train_multiclass(x: &[Vec<f64>], labels: &[usize], kernel: &KernelSpec, params: &SvmParams) -> Result<MulticlassSvm> {
    if x.len() != labels.len() {
        return Err(Error::Dimension {
            expected: x.len(),
            actual: labels.len(),
        });
    }
    let mut machines = Vec::with_capacity(3);
    for &(a, b) in &CLASS_PAIRS {
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for (xi, &l) in x.iter().zip(labels) {
            if l == a || l == b {
                xs.push(xi.clone());
                ys.push(if l == a { 1.0 } else { -1.0 });
            }
        }
        if xs.is_empty() {
            return Err(Error::DegenerateData(format!("classes {a} and {b} are both absent")));
        }
        machines.push(train_binary(&xs, &ys, kernel, params)?);
    }
    Ok(MulticlassSvm { machines })
}

#[cfg(test)]
mod tests;

//! Sequential minimal optimization for the soft-margin dual
//!
//! ```text
//! min_a  1/2 a'Qa - e'a   s.t.  0 <= a_i <= C,  y'a = 0,   Q_ij = y_i y_j K_ij
//! ```
//!
//! Pairs are chosen with second-order working-set selection: `i` is the
//! maximal violator, `j` the index giving the largest guaranteed decrease of
//! the objective. The run stops once the maximal KKT violation gap drops to
//! `tol`, which bounds every sample's KKT violation by `tol`.

use std::collections::{HashMap, VecDeque};

use super::kernel::{gram_matrix, KernelSpec};

const TAU: f64 = 1e-12;
/// Largest problem for which the whole Gram matrix is held in memory.
pub const FULL_GRAM_LIMIT: usize = 6000;
const ROW_CACHE_ROWS: usize = 1024;

enum KernelRows<'a> {
    Full { n: usize, g: Vec<f64> },
    Cached {
        spec: KernelSpec,
        data: &'a [Vec<f64>],
        rows: HashMap<usize, Vec<f64>>,
        order: VecDeque<usize>,
        diag: Vec<f64>,
    },
}

impl<'a> KernelRows<'a> {
    fn new(spec: &KernelSpec, data: &'a [Vec<f64>]) -> Self {
        let n = data.len();
        if n <= FULL_GRAM_LIMIT {
            KernelRows::Full {
                n,
                g: gram_matrix(spec, data),
            }
        } else {
            let diag = data.iter().map(|x| spec.eval_unchecked(x, x)).collect();
            KernelRows::Cached {
                spec: *spec,
                data,
                rows: HashMap::new(),
                order: VecDeque::new(),
                diag,
            }
        }
    }

    fn diag(&self, i: usize) -> f64 {
        match self {
            KernelRows::Full { n, g } => g[i * n + i],
            KernelRows::Cached { diag, .. } => diag[i],
        }
    }

    fn row(&mut self, i: usize) -> &[f64] {
        match self {
            KernelRows::Full { n, g } => &g[i * *n..(i + 1) * *n],
            KernelRows::Cached {
                spec,
                data,
                rows,
                order,
                ..
            } => {
                if !rows.contains_key(&i) {
                    if rows.len() >= ROW_CACHE_ROWS {
                        if let Some(old) = order.pop_front() {
                            rows.remove(&old);
                        }
                    }
                    let xi = &data[i];
                    rows.insert(i, data.iter().map(|xj| spec.eval_unchecked(xi, xj)).collect());
                    order.push_back(i);
                } else if let Some(pos) = order.iter().position(|&r| r == i) {
                    order.remove(pos);
                    order.push_back(i);
                }
                &rows[&i]
            }
        }
    }
}

/// Raw solver output.
#[derive(Debug, Clone)]
pub struct SmoSolution {
    pub alpha: Vec<f64>,
    pub bias: f64,
    /// Dual objective in maximization form, `sum a - 1/2 a'Qa`.
    pub objective: f64,
    pub iterations: usize,
    /// Final maximal violating-pair gap.
    pub gap: f64,
    pub converged: bool,
}

pub(crate) fn solve(spec: &KernelSpec, x: &[Vec<f64>], y: &[f64], c: f64, tol: f64, max_iter: usize) -> SmoSolution {
    let n = x.len();
    let mut k = KernelRows::new(spec, x);
    let mut alpha = vec![0.0; n];
    // Gradient of the minimization objective: Q a - e.
    let mut grad = vec![-1.0; n];
    let in_up = |a: f64, yt: f64| (yt > 0.0 && a < c) || (yt < 0.0 && a > 0.0);
    let in_low = |a: f64, yt: f64| (yt > 0.0 && a > 0.0) || (yt < 0.0 && a < c);

    let mut iterations = 0;
    let mut gap = f64::INFINITY;
    let mut converged = false;
    while iterations < max_iter {
        let mut gmax = f64::NEG_INFINITY;
        let mut i = usize::MAX;
        for t in 0..n {
            if in_up(alpha[t], y[t]) {
                let v = -y[t] * grad[t];
                if v > gmax {
                    gmax = v;
                    i = t;
                }
            }
        }
        if i == usize::MAX {
            converged = true;
            gap = 0.0;
            break;
        }
        let kii = k.diag(i);
        let mut gmin = f64::INFINITY;
        let mut j = usize::MAX;
        let mut best = f64::INFINITY;
        let row_i: Vec<f64> = k.row(i).to_vec();
        for t in 0..n {
            if !in_low(alpha[t], y[t]) {
                continue;
            }
            let v = -y[t] * grad[t];
            if v < gmin {
                gmin = v;
            }
            let b = gmax - v;
            if b > 0.0 {
                let mut a = kii + k.diag(t) - 2.0 * row_i[t];
                if a <= 0.0 {
                    a = TAU;
                }
                let obj = -(b * b) / a;
                if obj < best {
                    best = obj;
                    j = t;
                }
            }
        }
        gap = gmax - gmin;
        if gap <= tol || j == usize::MAX {
            // No pair can decrease the objective when j is unset.
            converged = true;
            break;
        }
        iterations += 1;

        let row_j: Vec<f64> = k.row(j).to_vec();
        let (old_i, old_j) = (alpha[i], alpha[j]);
        let mut quad = kii + k.diag(j) - 2.0 * row_i[j];
        if quad <= 0.0 {
            quad = TAU;
        }
        if y[i] != y[j] {
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        let di = (alpha[i] - old_i) * y[i];
        let dj = (alpha[j] - old_j) * y[j];
        for t in 0..n {
            grad[t] += y[t] * (row_i[t] * di + row_j[t] * dj);
        }
    }

    // Bias from free vectors, else the midpoint of the feasible interval.
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut sum_free, mut n_free) = (0.0, 0usize);
    for t in 0..n {
        let yg = y[t] * grad[t];
        if alpha[t] >= c {
            if y[t] < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if alpha[t] <= 0.0 {
            if y[t] > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            n_free += 1;
            sum_free += yg;
        }
    }
    let rho = if n_free > 0 {
        sum_free / n_free as f64
    } else {
        (ub + lb) / 2.0
    };
    let objective = -0.5 * alpha.iter().zip(&grad).map(|(a, g)| a * (g - 1.0)).sum::<f64>();

    SmoSolution {
        alpha,
        bias: -rho,
        objective,
        iterations,
        gap,
        converged,
    }
}

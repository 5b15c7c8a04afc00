//! Independent reference implementations shared by the integration tests.
//! None of them calls into the code under test beyond plain data types.
#![allow(dead_code)]

use csi_bench::forest::TreeNode;
use csi_bench::rng::rng_from_seed;
use csi_bench::svm::{kernel_eval, KernelSpec};
use nalgebra::{DMatrix, DVector};
use rand::Rng as _;

/// A six-point binary problem in the plane.
#[derive(Debug, Clone)]
pub struct SvmFixture {
    pub name: String,
    pub x: Vec<Vec<f64>>,
    pub y: Vec<f64>,
    pub kernel: KernelSpec,
    pub c: f64,
}

fn pts(p: [[f64; 2]; 6]) -> Vec<Vec<f64>> {
    p.iter().map(|r| r.to_vec()).collect()
}

/// Hand-picked fixtures plus seeded random ones, all with both classes.
pub fn svm_fixtures() -> Vec<SvmFixture> {
    let lin = KernelSpec::linear();
    let rbf = KernelSpec::rbf(0.5).unwrap();
    let poly = KernelSpec::polynomial(1.0, 2).unwrap();
    let pm = vec![1.0, 1.0, 1.0, -1.0, -1.0, -1.0];
    let mut out = vec![
        SvmFixture {
            name: "separable".into(),
            x: pts([[2.0, 2.0], [3.0, 1.0], [2.5, 3.0], [-1.0, -1.0], [0.0, -2.0], [-2.0, 0.5]]),
            y: pm.clone(),
            kernel: lin,
            c: 10.0,
        },
        SvmFixture {
            name: "overlap".into(),
            x: pts([[1.0, 0.0], [0.2, 0.3], [-0.5, 1.0], [0.0, 0.0], [0.8, -0.2], [-1.0, -1.0]]),
            y: pm.clone(),
            kernel: lin,
            c: 1.0,
        },
        SvmFixture {
            name: "collinear".into(),
            x: pts([[0.0, 0.0], [1.0, 1.0], [2.0, 2.0], [3.0, 3.0], [4.0, 4.0], [5.0, 5.0]]),
            y: vec![1.0, -1.0, 1.0, -1.0, 1.0, -1.0],
            kernel: lin,
            c: 0.5,
        },
        SvmFixture {
            name: "ring-rbf".into(),
            x: pts([[0.0, 0.1], [0.1, -0.1], [-0.1, 0.0], [2.0, 0.0], [-1.5, 1.5], [0.0, -2.0]]),
            y: pm.clone(),
            kernel: rbf,
            c: 5.0,
        },
        SvmFixture {
            name: "xor-poly".into(),
            x: pts([[1.0, 1.0], [-1.0, -1.0], [1.2, 0.9], [1.0, -1.0], [-1.0, 1.0], [-0.9, 1.1]]),
            y: pm.clone(),
            kernel: poly,
            c: 2.0,
        },
        SvmFixture {
            name: "duplicate-points".into(),
            x: pts([[0.0, 0.0], [0.0, 0.0], [1.0, 1.0], [1.0, 1.0], [2.0, 0.0], [0.0, 2.0]]),
            y: vec![1.0, -1.0, 1.0, -1.0, 1.0, -1.0],
            kernel: rbf,
            c: 1.0,
        },
        SvmFixture {
            name: "imbalanced".into(),
            x: pts([[0.0, 0.0], [1.0, 0.5], [0.5, 1.0], [0.3, 0.2], [0.9, 0.9], [3.0, 3.0]]),
            y: vec![1.0, 1.0, 1.0, 1.0, 1.0, -1.0],
            kernel: lin,
            c: 3.0,
        },
    ];
    let mut rng = rng_from_seed(2024);
    let kernels = [lin, rbf, poly, KernelSpec::rbf(2.0).unwrap()];
    let cs = [0.1, 1.0, 10.0];
    for i in 0..36 {
        let x: Vec<Vec<f64>> = (0..6).map(|_| vec![rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)]).collect();
        let mut y: Vec<f64> = (0..6).map(|_| if rng.random_bool(0.5) { 1.0 } else { -1.0 }).collect();
        y[0] = 1.0;
        y[5] = -1.0;
        out.push(SvmFixture {
            name: format!("random-{i}"),
            x,
            y,
            kernel: kernels[i % kernels.len()],
            c: cs[i % cs.len()],
        });
    }
    out
}

pub fn dual_objective(q: &DMatrix<f64>, alpha: &[f64]) -> f64 {
    let a = DVector::from_column_slice(alpha);
    a.sum() - 0.5 * (a.transpose() * q * &a)[(0, 0)]
}

/// Maximizes `sum a - 1/2 a'Qa` subject to `0 <= a <= C`, `y'a = 0` by
/// enumerating every assignment of each multiplier to {0, C, free}. Free
/// multipliers solve the stationarity system exactly; a candidate is accepted
/// when it satisfies all KKT conditions, which for this convex problem makes
/// it optimal. Returns the best objective and its multipliers.
pub fn brute_force_dual(f: &SvmFixture) -> (f64, Vec<f64>) {
    let n = f.x.len();
    let c = f.c;
    let q = DMatrix::from_fn(n, n, |i, j| f.y[i] * f.y[j] * kernel_eval(&f.kernel, &f.x[i], &f.x[j]).unwrap());
    let tol = 1e-9 * (1.0 + c);
    let mut best: Option<(f64, Vec<f64>)> = None;
    for code in 0..3usize.pow(n as u32) {
        // 0: at zero, 1: at C, 2: free
        let state: Vec<usize> = (0..n).map(|i| code / 3usize.pow(i as u32) % 3).collect();
        let free: Vec<usize> = (0..n).filter(|&i| state[i] == 2).collect();
        let mut alpha: Vec<f64> = state.iter().map(|&s| if s == 1 { c } else { 0.0 }).collect();
        let b_range: (f64, f64);
        if free.is_empty() {
            let sy: f64 = (0..n).map(|i| f.y[i] * alpha[i]).sum();
            if sy.abs() > tol {
                continue;
            }
            b_range = (f64::NEG_INFINITY, f64::INFINITY);
        } else {
            let m = free.len();
            let mut a = DMatrix::zeros(m + 1, m + 1);
            let mut rhs = DVector::zeros(m + 1);
            for (r, &i) in free.iter().enumerate() {
                for (s, &j) in free.iter().enumerate() {
                    a[(r, s)] = q[(i, j)];
                }
                a[(r, m)] = f.y[i];
                rhs[r] = 1.0 - (0..n).filter(|&j| state[j] == 1).map(|j| q[(i, j)] * c).sum::<f64>();
            }
            for (s, &j) in free.iter().enumerate() {
                a[(m, s)] = f.y[j];
            }
            rhs[m] = -(0..n).filter(|&j| state[j] == 1).map(|j| f.y[j] * c).sum::<f64>();
            let svd = a.clone().svd(true, true);
            let Ok(sol) = svd.solve(&rhs, 1e-10) else { continue };
            if (&a * &sol - &rhs).amax() > 1e-8 {
                continue;
            }
            for (s, &i) in free.iter().enumerate() {
                alpha[i] = sol[s];
            }
            if free.iter().any(|&i| alpha[i] < -tol || alpha[i] > c + tol) {
                continue;
            }
            b_range = (sol[m], sol[m]);
        }
        // Bound multipliers: gradient 1 - (Qa)_i - b y_i must point outward.
        let qa = &q * DVector::from_column_slice(&alpha);
        let (mut lo, mut hi) = b_range;
        for i in (0..n).filter(|&i| state[i] != 2) {
            let r = 1.0 - qa[i];
            // state 0 needs r - b y <= 0, state 1 needs r - b y >= 0.
            let need_b_ge = (state[i] == 0) == (f.y[i] > 0.0);
            let bound = r * f.y[i];
            if need_b_ge {
                lo = lo.max(bound - 1e-7);
            } else {
                hi = hi.min(bound + 1e-7);
            }
        }
        if lo > hi {
            continue;
        }
        let obj = dual_objective(&q, &alpha);
        if best.as_ref().is_none_or(|(b, _)| obj > *b) {
            best = Some((obj, alpha));
        }
    }
    best.expect("a convex QP with a nonempty feasible set has a KKT point")
}

fn oracle_counts(labels: &[usize], idx: &[usize]) -> [u64; 3] {
    let mut c = [0u64; 3];
    for &i in idx {
        c[labels[i]] += 1;
    }
    c
}

fn oracle_leaf(counts: [u64; 3]) -> TreeNode {
    let label = (0..3).fold(0, |b, c| if counts[c] > counts[b] { c } else { b });
    TreeNode::Leaf { counts, label }
}

/// `sum_c count_c^2 / n` for one side, as a fraction.
fn purity(side: &[u64; 3]) -> (i128, i128) {
    let n: i128 = side.iter().map(|&v| v as i128).sum();
    (side.iter().map(|&v| (v as i128) * (v as i128)).sum(), n)
}

fn frac_add(a: (i128, i128), b: (i128, i128)) -> (i128, i128) {
    (a.0 * b.1 + b.0 * a.1, a.1 * b.1)
}

fn frac_gt(a: (i128, i128), b: (i128, i128)) -> bool {
    a.0 * b.1 > b.0 * a.1
}

/// Exhaustive CART with Gini impurity over every feature and every midpoint
/// between distinct values, splitting only on a strict impurity decrease. Ties
/// keep the first candidate in (feature, threshold) order.
pub fn cart_oracle(x: &[Vec<f64>], labels: &[usize], idx: &[usize]) -> TreeNode {
    let counts = oracle_counts(labels, idx);
    if counts.iter().filter(|&&c| c > 0).count() <= 1 || idx.len() < 2 {
        return oracle_leaf(counts);
    }
    let parent = purity(&counts);
    let mut best: Option<((i128, i128), usize, f64)> = None;
    for f in 0..x[0].len() {
        let mut vals: Vec<f64> = idx.iter().map(|&i| x[i][f]).collect();
        vals.sort_by(f64::total_cmp);
        vals.dedup();
        for w in vals.windows(2) {
            let mid = (w[0] + w[1]) / 2.0;
            let thr = if mid >= w[0] && mid < w[1] { mid } else { w[0] };
            let left: Vec<usize> = idx.iter().copied().filter(|&i| x[i][f] <= thr).collect();
            let right: Vec<usize> = idx.iter().copied().filter(|&i| x[i][f] > thr).collect();
            let score = frac_add(purity(&oracle_counts(labels, &left)), purity(&oracle_counts(labels, &right)));
            if !frac_gt(score, parent) {
                continue;
            }
            if best.as_ref().is_none_or(|(b, _, _)| frac_gt(score, *b)) {
                best = Some((score, f, thr));
            }
        }
    }
    let Some((_, feature, threshold)) = best else {
        return oracle_leaf(counts);
    };
    let left: Vec<usize> = idx.iter().copied().filter(|&i| x[i][feature] <= threshold).collect();
    let right: Vec<usize> = idx.iter().copied().filter(|&i| x[i][feature] > threshold).collect();
    TreeNode::Split {
        feature,
        threshold,
        left: Box::new(cart_oracle(x, labels, &left)),
        right: Box::new(cart_oracle(x, labels, &right)),
    }
}

/// Six-point, two-feature tree fixtures with labels in 0..3.
pub fn tree_fixtures() -> Vec<(Vec<Vec<f64>>, Vec<usize>)> {
    let mut out = vec![
        (pts([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0], [3.0, 0.0], [4.0, 0.0], [5.0, 0.0]]), vec![0, 0, 1, 1, 2, 2]),
        (pts([[0.0, 5.0], [0.0, 4.0], [0.0, 3.0], [1.0, 2.0], [1.0, 1.0], [1.0, 0.0]]), vec![0, 1, 0, 1, 2, 2]),
        // Both columns carry the same ordering: ties resolve to feature 0.
        (pts([[1.0, 1.0], [2.0, 2.0], [3.0, 3.0], [4.0, 4.0], [5.0, 5.0], [6.0, 6.0]]), vec![0, 0, 0, 2, 2, 2]),
        // Duplicated points with conflicting labels cannot be separated.
        (pts([[1.0, 1.0], [1.0, 1.0], [1.0, 1.0], [2.0, 2.0], [2.0, 2.0], [2.0, 2.0]]), vec![0, 1, 2, 0, 1, 2]),
        (pts([[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0], [0.5, 0.5], [0.5, 0.6]]), vec![0, 1, 1, 0, 2, 2]),
    ];
    let mut rng = rng_from_seed(77);
    for _ in 0..60 {
        // Small integer grid so ties between candidate splits are common.
        let x: Vec<Vec<f64>> = (0..6).map(|_| vec![rng.random_range(0..4) as f64, rng.random_range(0..4) as f64 * 0.5]).collect();
        let y: Vec<usize> = (0..6).map(|_| rng.random_range(0..3)).collect();
        out.push((x, y));
    }
    out
}

#[derive(Debug, Clone, Copy)]
pub struct BruteMetrics {
    pub accuracy: f64,
    pub precision: [f64; 3],
    pub recall: [f64; 3],
    pub f1: [f64; 3],
    pub macro_f1: f64,
}

/// Expands the matrix back into (truth, prediction) pairs and counts
/// outcomes one pair at a time. Zero denominators give 0.
pub fn brute_metrics(confusion: &[[u64; 3]; 3]) -> BruteMetrics {
    let mut pairs = Vec::new();
    for (t, row) in confusion.iter().enumerate() {
        for (p, &n) in row.iter().enumerate() {
            pairs.extend(std::iter::repeat_n((t, p), n as usize));
        }
    }
    let total = pairs.len();
    let correct = pairs.iter().filter(|(t, p)| t == p).count();
    let div = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let mut m = BruteMetrics {
        accuracy: div(correct, total),
        precision: [0.0; 3],
        recall: [0.0; 3],
        f1: [0.0; 3],
        macro_f1: 0.0,
    };
    for c in 0..3 {
        let tp = pairs.iter().filter(|&&(t, p)| t == c && p == c).count();
        let predicted = pairs.iter().filter(|&&(_, p)| p == c).count();
        let actual = pairs.iter().filter(|&&(t, _)| t == c).count();
        m.precision[c] = div(tp, predicted);
        m.recall[c] = div(tp, actual);
        let s = m.precision[c] + m.recall[c];
        m.f1[c] = if s == 0.0 { 0.0 } else { 2.0 * m.precision[c] * m.recall[c] / s };
    }
    m.macro_f1 = m.f1.iter().sum::<f64>() / 3.0;
    m
}

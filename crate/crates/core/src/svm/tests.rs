use super::*;
use crate::rng::rng_from_seed;
use crate::synth::gaussian_blobs;
use nalgebra::DMatrix;
use rand::Rng;

fn random_vecs(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = rng_from_seed(seed);
    (0..n).map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect()).collect()
}

#[test]
fn rbf_self_similarity_is_exactly_one() {
    let k = KernelSpec::rbf(0.7).unwrap();
    for x in random_vecs(50, 7, 1) {
        assert_eq!(kernel_eval(&k, &x, &x).unwrap(), 1.0);
    }
}

#[test]
fn linear_orthogonal_is_zero() {
    assert_eq!(kernel_eval(&KernelSpec::linear(), &[1.0, 0.0, 0.0], &[0.0, 3.0, -2.0]).unwrap(), 0.0);
}

#[test]
fn degree_one_polynomial_equals_linear() {
    let p = KernelSpec::polynomial(0.0, 1).unwrap();
    let xs = random_vecs(2000, 5, 2);
    for pair in xs.chunks_exact(2) {
        let a = kernel_eval(&p, &pair[0], &pair[1]).unwrap();
        let b = kernel_eval(&KernelSpec::linear(), &pair[0], &pair[1]).unwrap();
        assert!((a - b).abs() <= 1e-12);
    }
}

#[test]
fn kernel_dimension_mismatch() {
    assert!(matches!(
        kernel_eval(&KernelSpec::linear(), &[1.0], &[1.0, 2.0]),
        Err(Error::Dimension { .. })
    ));
    assert!(KernelSpec::rbf(0.0).is_err());
    assert!(KernelSpec::polynomial(1.0, 0).is_err());
}

#[test]
fn gram_matrices_are_symmetric_psd() {
    for (spec, seed) in [(KernelSpec::linear(), 3), (KernelSpec::rbf(0.5).unwrap(), 4)] {
        let xs = random_vecs(20, 4, seed);
        let n = xs.len();
        let g = DMatrix::from_fn(n, n, |i, j| kernel_eval(&spec, &xs[i], &xs[j]).unwrap());
        assert_eq!(g, g.transpose());
        let min_eig = g.symmetric_eigenvalues().min();
        assert!(min_eig >= -1e-8, "{spec:?}: {min_eig}");
        // The GEMM-backed Gram used in training agrees with pointwise evaluation.
        let fast = kernel::gram_matrix(&spec, &xs);
        for i in 0..n {
            for j in 0..n {
                assert!((fast[i * n + j] - g[(i, j)]).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn two_point_max_margin_closed_form() {
    let x = vec![vec![0.0, 0.0], vec![2.0, 0.0]];
    let y = vec![-1.0, 1.0];
    let params = SvmParams {
        c: 10.0,
        ..SvmParams::default()
    };
    let m = train_binary(&x, &y, &KernelSpec::linear(), &params).unwrap();
    let w = m.weights().unwrap();
    // Closed form: w = (1, 0), b = -1, boundary x1 = 1.
    assert!((w[0] - 1.0).abs() < 1e-3 && w[1].abs() < 1e-9, "{w:?}");
    let boundary = -m.bias / w[0];
    assert!((boundary - 1.0).abs() < 1e-3);
    assert!(m.decision_value(&[1.0, 0.0]).abs() < 1e-3);
    // Both points are support vectors sitting on the margin.
    assert!((m.decision_value(&x[0]) + 1.0).abs() < params.tol);
    assert!((m.decision_value(&x[1]) - 1.0).abs() < params.tol);
}

#[test]
fn separable_twenty_points() {
    let mut rng = rng_from_seed(5);
    let mut x = Vec::new();
    let mut y = Vec::new();
    for i in 0..20 {
        let label = if i % 2 == 0 { 1.0 } else { -1.0 };
        x.push(vec![label * 2.0 + rng.random_range(-0.8..0.8), rng.random_range(-3.0..3.0)]);
        y.push(label);
    }
    let m = train_binary(&x, &y, &KernelSpec::linear(), &SvmParams::default()).unwrap();
    for (xi, yi) in x.iter().zip(&y) {
        assert!(m.decision_value(xi) * yi > 0.0);
    }
}

#[test]
fn xor_needs_rbf() {
    let x = vec![vec![0.0, 0.0], vec![1.0, 1.0], vec![0.0, 1.0], vec![1.0, 0.0]];
    let y = vec![1.0, 1.0, -1.0, -1.0];
    let params = SvmParams {
        c: 10.0,
        ..SvmParams::default()
    };
    let rbf = train_binary(&x, &y, &KernelSpec::rbf(1.0).unwrap(), &params).unwrap();
    assert!(x.iter().zip(&y).all(|(xi, yi)| rbf.decision_value(xi) * yi > 0.0));
    let lin = train_binary(&x, &y, &KernelSpec::linear(), &params).unwrap();
    assert!(x.iter().zip(&y).any(|(xi, yi)| lin.decision_value(xi) * yi <= 0.0));
}

#[test]
fn single_class_is_degenerate() {
    let x = vec![vec![0.0], vec![1.0]];
    assert!(matches!(
        train_binary(&x, &[1.0, 1.0], &KernelSpec::linear(), &SvmParams::default()),
        Err(Error::DegenerateData(_))
    ));
}

#[test]
fn flipping_labels_flips_decisions() {
    let (x, labels) = gaussian_blobs(&[vec![0.0, 0.0], vec![1.5, 1.0]], 0.6, 15, 9);
    let y: Vec<f64> = labels.iter().map(|&l| if l == 0 { 1.0 } else { -1.0 }).collect();
    let neg: Vec<f64> = y.iter().map(|v| -v).collect();
    let k = KernelSpec::rbf(0.8).unwrap();
    let a = train_binary(&x, &y, &k, &SvmParams::default()).unwrap();
    let b = train_binary(&x, &neg, &k, &SvmParams::default()).unwrap();
    for probe in random_vecs(20, 2, 10) {
        let (da, db) = (a.decision_value(&probe), b.decision_value(&probe));
        // Both runs stop at the KKT tolerance, not at the exact optimum.
        assert!((da + db).abs() < 1e-2, "{da} vs {db}");
        if da.abs() > 1e-2 {
            assert_eq!(da.signum(), -db.signum());
        }
    }
}

#[test]
fn trained_machine_satisfies_dual_constraints_and_kkt() {
    let (x, labels) = gaussian_blobs(&[vec![0.0, 0.0, 0.0], vec![1.0, 0.5, 0.0]], 0.7, 40, 11);
    let y: Vec<f64> = labels.iter().map(|&l| if l == 0 { 1.0 } else { -1.0 }).collect();
    for k in [KernelSpec::linear(), KernelSpec::rbf(0.5).unwrap(), KernelSpec::polynomial(1.0, 2).unwrap()] {
        let params = SvmParams::default();
        let (m, report) = train_binary_with_report(&x, &y, &k, &params).unwrap();
        assert!(report.converged);
        assert!(report.alpha.iter().all(|&a| (0.0..=params.c).contains(&a)));
        let balance: f64 = report.alpha.iter().zip(&y).map(|(a, y)| a * y).sum();
        assert!(balance.abs() <= 1e-6);
        let viol = max_kkt_violation(&m, &x, &y, &report.alpha);
        assert!(viol <= params.tol + 1e-9, "{k:?}: {viol}");
    }
}

#[test]
fn three_blobs_are_fit_exactly() {
    let (x, y) = gaussian_blobs(&[vec![0.0, 0.0], vec![4.0, 0.0], vec![0.0, 4.0]], 0.3, 30, 12);
    let m = train_multiclass(&x, &y, &KernelSpec::rbf(0.5).unwrap(), &SvmParams::default()).unwrap();
    assert_eq!(m.machines.len(), 3);
    assert!(x.iter().zip(&y).all(|(xi, &yi)| m.predict(xi) == yi));
}

#[test]
fn vote_rules() {
    // (0,1) -> 1, (0,2) -> 2, (1,2) -> 1
    assert_eq!(vote(&[-1.0, -1.0, 1.0]), 1);
    // Cycle 0>1, 2>0, 1>2 with equal margins resolves to class 0.
    assert_eq!(vote(&[1.0, -1.0, 1.0]), 0);
    // Same cycle, class 2 holds the largest margin.
    assert_eq!(vote(&[0.5, -3.0, 1.0]), 2);
}

#[test]
fn argmax_survives_positive_rescaling() {
    let mut rng = rng_from_seed(13);
    for _ in 0..500 {
        let d = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
        let s = rng.random_range(0.01..100.0);
        assert_eq!(vote(&d), vote(&[d[0] * s, d[1] * s, d[2] * s]));
    }
}

//! Randomized agreement between the library and the reference
//! implementations in `common`.

mod common;

use csi_bench::eval::EvalReport;
use csi_bench::forest::{fit_tree, TreeParams};
use csi_bench::rng::rng_from_seed;
use csi_bench::svm::{max_kkt_violation, train_binary_with_report, KernelSpec, SvmParams};
use proptest::prelude::*;

fn six_points() -> impl Strategy<Value = Vec<Vec<f64>>> {
    proptest::collection::vec(proptest::collection::vec(-3.0f64..3.0, 2), 6)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn smo_matches_brute_force_dual(
        x in six_points(),
        signs in proptest::collection::vec(any::<bool>(), 6),
        kernel in 0usize..3,
        c in prop_oneof![Just(0.3), Just(1.0), Just(20.0)],
    ) {
        let mut y: Vec<f64> = signs.iter().map(|&s| if s { 1.0 } else { -1.0 }).collect();
        y[0] = 1.0;
        y[1] = -1.0;
        let kernel = [KernelSpec::linear(), KernelSpec::rbf(0.8).unwrap(), KernelSpec::polynomial(1.0, 2).unwrap()][kernel];
        let f = common::SvmFixture { name: "prop".into(), x, y, kernel, c };
        let params = SvmParams { c, tol: 1e-6, ..SvmParams::default() };
        let (machine, report) = train_binary_with_report(&f.x, &f.y, &f.kernel, &params).unwrap();
        let (oracle, _) = common::brute_force_dual(&f);
        prop_assert!((report.objective - oracle).abs() <= 1e-3 * oracle.abs().max(1e-9), "{} vs {}", report.objective, oracle);
        prop_assert!(max_kkt_violation(&machine, &f.x, &f.y, &report.alpha) <= 1e-3);
        prop_assert!(report.alpha.iter().all(|&a| (0.0..=c).contains(&a)));
        let balance: f64 = report.alpha.iter().zip(&f.y).map(|(a, y)| a * y).sum();
        prop_assert!(balance.abs() <= 1e-9 * (1.0 + c));
    }

    #[test]
    fn full_feature_tree_matches_cart(
        x in proptest::collection::vec(proptest::collection::vec((0i32..5).prop_map(f64::from), 3), 2..12),
        seed in any::<u64>(),
    ) {
        let labels: Vec<usize> = (0..x.len()).map(|i| ((seed >> (2 * i)) % 3) as usize).collect();
        let idx: Vec<usize> = (0..x.len()).collect();
        let params = TreeParams { max_features: 3, max_depth: None, min_samples_split: 2 };
        let tree = fit_tree(&x, &labels, &idx, &params, &mut rng_from_seed(seed)).unwrap();
        prop_assert_eq!(tree, common::cart_oracle(&x, &labels, &idx));
    }

    #[test]
    fn report_matches_brute_force(m in proptest::array::uniform3(proptest::array::uniform3(0u64..40))) {
        prop_assume!(m.iter().flatten().sum::<u64>() > 0);
        let r = EvalReport::from_confusion("m", "d", m);
        let b = common::brute_metrics(&m);
        prop_assert!((r.accuracy - b.accuracy).abs() <= 1e-12);
        prop_assert!((r.macro_f1 - b.macro_f1).abs() <= 1e-12);
        for c in 0..3 {
            prop_assert!((r.per_class[c].precision - b.precision[c]).abs() <= 1e-12);
            prop_assert!((r.per_class[c].recall - b.recall[c]).abs() <= 1e-12);
            prop_assert!((r.per_class[c].f1 - b.f1[c]).abs() <= 1e-12);
        }
    }
}

#[test]
fn brute_force_dual_knows_the_two_point_answer() {
    // Points at +-1 on a line: alpha = 1/2 each, objective 1/2.
    let f = common::SvmFixture {
        name: "pair".into(),
        x: vec![vec![1.0, 0.0], vec![-1.0, 0.0]],
        y: vec![1.0, -1.0],
        kernel: KernelSpec::linear(),
        c: 10.0,
    };
    let (obj, alpha) = common::brute_force_dual(&f);
    assert!((obj - 0.5).abs() < 1e-12);
    assert!(alpha.iter().all(|a| (a - 0.5).abs() < 1e-12));
}

#[test]
fn cart_oracle_on_a_known_tree() {
    let x: Vec<Vec<f64>> = [0.0, 1.0, 10.0, 11.0].iter().map(|&v| vec![v]).collect();
    let t = common::cart_oracle(&x, &[0, 0, 1, 1], &[0, 1, 2, 3]);
    assert_eq!(t.depth(), 1);
    assert_eq!(t.predict_index(&[5.0]), 0);
    assert_eq!(t.predict_index(&[6.0]), 1);
}

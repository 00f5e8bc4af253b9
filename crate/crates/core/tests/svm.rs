mod common;

use common::{primal_objective_oracle, projected_gradient_primal, random_psd, svm_fixture};
use graphkernel::diffcore::Matrix;
use graphkernel::svm::{fit_dual, fit_primal, kkt_violation, predict, top_support_vectors, PrimalConfig, DEFAULT_DUAL_TOL};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn primal_matches_gradient_oracle_on_random_psd() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for trial in 0..10 {
        let rank = [2, 5, 10][trial % 3];
        let k = random_psd(&mut rng, 10, rank);
        let y: Vec<f64> = (0..10).map(|i| if (i + trial) % 3 == 0 { -1.0 } else { 1.0 }).collect();
        let state = fit_primal(&k, &y, &PrimalConfig::default()).unwrap();
        let ours = primal_objective_oracle(&k, &y, &state.beta, 1.0);
        let oracle = projected_gradient_primal(&k, &y, 1.0, 200_000);
        assert!(
            (ours - oracle).abs() <= 1e-6,
            "trial {trial}: newton {ours} vs oracle {oracle}"
        );
        assert!(state.iterations <= 100);
        assert!(state.objectives.windows(2).all(|w| w[1] <= w[0] + 1e-12));
    }
}

#[test]
fn dual_matches_qp_fixture() {
    let k = svm_fixture::gram();
    let y = svm_fixture::signs();
    let model = fit_dual(&k, &y, svm_fixture::C, 1e-8).unwrap();
    for i in 0..20 {
        let f = model.decision(k.row(i)).unwrap();
        assert!((f - svm_fixture::DECISION[i]).abs() <= 1e-4, "train {i}: {f}");
    }
    for (row, want) in svm_fixture::test_rows().iter().zip(svm_fixture::DECISION_TEST) {
        assert!((model.decision(row).unwrap() - want).abs() <= 1e-4);
    }
    let dense: Vec<f64> = model.dense_coef().iter().map(|c| c.abs()).collect();
    for (a, b) in dense.iter().zip(svm_fixture::ALPHA) {
        assert!((a - b).abs() <= 1e-4);
    }
    assert!((model.bias - svm_fixture::BIAS).abs() <= 1e-4);
}

#[test]
fn dual_kkt_at_default_tolerance() {
    let k = svm_fixture::gram();
    let y = svm_fixture::signs();
    let model = fit_dual(&k, &y, svm_fixture::C, DEFAULT_DUAL_TOL).unwrap();
    assert!(kkt_violation(&model, &k, &y).unwrap() <= 1e-3);
    assert!(model.alpha().all(|a| a > 0.0 && a <= svm_fixture::C));
}

#[test]
fn support_ranking_matches_fixture() {
    let k = svm_fixture::gram();
    let model = fit_dual(&k, &svm_fixture::signs(), svm_fixture::C, 1e-8).unwrap();
    let top: Vec<usize> = top_support_vectors(&model, 8).into_iter().map(|t| t.0).collect();
    // Six vectors at the box bound (index order), then the two free ones.
    assert_eq!(&top[..6], &[4, 6, 7, 10, 12, 19]);
    let mut tail = top[6..].to_vec();
    tail.sort_unstable();
    assert_eq!(tail, vec![8, 17]);
}

#[test]
fn predicting_a_support_vector_row_recovers_its_side() {
    let k = svm_fixture::gram();
    let y = svm_fixture::signs();
    let model = fit_dual(&k, &y, svm_fixture::C, 1e-8).unwrap();
    // Index 0 is a correctly classified success vector far from the margin.
    assert_eq!(predict(&model, k.row(0)).unwrap().0, 1);
    assert_eq!(predict(&model, k.row(13)).unwrap().0, 0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn primal_objective_never_increases(seed in 0u64..10_000, n in 2usize..12, rank in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = random_psd(&mut rng, n, rank);
        let y: Vec<f64> = (0..n).map(|i| if (seed as usize + i).is_multiple_of(2) { 1.0 } else { -1.0 }).collect();
        let s = fit_primal(&k, &y, &PrimalConfig::default()).unwrap();
        prop_assert!(s.iterations <= 100);
        for w in s.objectives.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-12);
        }
    }

    #[test]
    fn dual_satisfies_kkt(seed in 0u64..10_000, n in 2usize..25) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = random_psd(&mut rng, n, 3);
        let mut y: Vec<f64> = (0..n).map(|i| if (seed as usize + i).is_multiple_of(3) { 1.0 } else { -1.0 }).collect();
        y[0] = 1.0;
        y[1] = -1.0;
        let m = fit_dual(&k, &y, 1.0, DEFAULT_DUAL_TOL).unwrap();
        // The stopping rule bounds the maximal violating pair gap by tol,
        // which bounds each individual violation by the same amount.
        prop_assert!(kkt_violation(&m, &k, &y).unwrap() <= 1e-3 + 1e-9);
        prop_assert!(m.alpha().all(|a| a <= 1.0));
    }
}

#[test]
fn primal_gradient_oracle_sanity() {
    let k = Matrix::scalar(1.0);
    assert!((projected_gradient_primal(&k, &[1.0], 1.0, 10_000) - 0.5).abs() < 1e-12);
}

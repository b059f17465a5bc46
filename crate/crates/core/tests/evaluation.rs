mod common;

use common::*;
use kfed::evaluation::{kmeans_cost, labels_cost, matched_accuracy};
use kfed::Clustering;
use proptest::prelude::*;
use rand::Rng;

#[test]
fn cost_matches_double_loop_on_twenty_points() {
    let a = uniform_matrix(20, 3, 20);
    let mut r = rng(21);
    let labels: Vec<usize> = (0..20).map(|i| if i < 4 { i } else { r.random_range(0..4) }).collect();
    let t = Clustering::from_labels(&a, &labels, 4).unwrap();
    let oracle = cost_double_loop(&to_vecs(&a), &labels, 4);
    assert!((kmeans_cost(&a, &t) - oracle).abs() <= 1e-10);
    assert!((labels_cost(&a, &labels, 4).unwrap() - oracle).abs() <= 1e-10);
}

#[test]
fn nine_point_contingency_matches_factorial_search() {
    let truth = [0, 0, 0, 1, 1, 1, 2, 2, 2];
    let pred = [2, 2, 1, 0, 0, 2, 1, 1, 0];
    let m = matched_accuracy(&pred, &truth).unwrap();
    let best = brute_force_agreement(&pred, &truth, 3);
    assert_eq!(9 - m.misclassified, best);
    assert_eq!(best, 6);
}

#[test]
fn hungarian_equals_brute_force_up_to_six_labels() {
    let mut r = rng(5);
    for case in 0..200 {
        let k = 1 + case % 6;
        let n = r.random_range(1..40);
        let truth: Vec<usize> = (0..n).map(|_| r.random_range(0..k)).collect();
        let pred: Vec<usize> = (0..n)
            .map(|i| if r.random_bool(0.6) { (truth[i] + 1) % k } else { r.random_range(0..k) })
            .collect();
        let m = matched_accuracy(&pred, &truth).unwrap();
        assert_eq!(n - m.misclassified, brute_force_agreement(&pred, &truth, k), "case {case}");
        assert!((m.accuracy - (1.0 - m.misclassified as f64 / n as f64)).abs() < 1e-15);
        // The permutation is a bijection that reproduces the agreement.
        let mut seen = m.permutation.clone();
        seen.sort_unstable();
        seen.dedup();
        assert_eq!(seen.len(), m.permutation.len());
        let agree = pred.iter().zip(&truth).filter(|(&p, &t)| m.map(p) == t).count();
        assert_eq!(agree, n - m.misclassified);
    }
}

proptest! {
    #[test]
    fn accuracy_symmetric_and_relabel_invariant(
        pairs in proptest::collection::vec((0usize..5, 0usize..5), 1..60),
        shift in 0usize..5,
    ) {
        let pred: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        let truth: Vec<usize> = pairs.iter().map(|p| p.1).collect();
        let base = matched_accuracy(&pred, &truth).unwrap().misclassified;
        prop_assert_eq!(matched_accuracy(&truth, &pred).unwrap().misclassified, base);
        let relabeled: Vec<usize> = pred.iter().map(|p| (p + shift) % 5).collect();
        prop_assert_eq!(matched_accuracy(&relabeled, &truth).unwrap().misclassified, base);
    }
}

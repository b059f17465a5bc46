mod common;

use common::*;
use kfed::linalg::{frobenius_norm, operator_norm, top_k_projection};
use kfed::separation::build_center_matrix;
use kfed::DataMatrix;
use proptest::prelude::*;

#[test]
fn oracle_sanity() {
    let (vals, _) = jacobi(vec![vec![2.0, 1.0], vec![1.0, 2.0]]);
    assert!((vals[0] - 3.0).abs() < 1e-12 && (vals[1] - 1.0).abs() < 1e-12);
    let (vals, vecs) = jacobi(vec![
        vec![4.0, 1.0, 0.5],
        vec![1.0, 3.0, 0.2],
        vec![0.5, 0.2, 1.0],
    ]);
    // A v = λ v for the leading pair.
    let a = [[4.0, 1.0, 0.5], [1.0, 3.0, 0.2], [0.5, 0.2, 1.0]];
    for (i, row) in a.iter().enumerate() {
        let av: f64 = (0..3).map(|j| row[j] * vecs[j][0]).sum();
        assert!((av - vals[0] * vecs[i][0]).abs() < 1e-10);
    }
}

#[test]
fn operator_norm_agrees_with_oracle_on_random_shapes() {
    for (seed, (n, d)) in [(3, 5), (20, 7), (7, 30), (50, 50), (64, 12)].into_iter().enumerate() {
        let m = uniform_matrix(n, d, seed as u64);
        let rows = to_vecs(&m);
        let oracle = if n >= d {
            op_norm_oracle(&rows)
        } else {
            // σ₁ is shared with the transpose; take the smaller Gram.
            let t: Vec<Vec<f64>> = (0..d).map(|j| rows.iter().map(|r| r[j]).collect()).collect();
            op_norm_oracle(&t)
        };
        let got = operator_norm(&m);
        assert!((got - oracle).abs() <= 1e-8 * oracle, "{n}x{d}: {got} vs {oracle}");
    }
}

#[test]
fn operator_norm_with_nearly_equal_top_values() {
    // Equidistant planted means give k almost equal leading singular values.
    for seed in 0..5u64 {
        let (a, truth, _) = planted(16, 40, 20, 4, 5.0, 100.0, seed);
        let centered = a.sub(&build_center_matrix(&a, &truth.assignment, 16).unwrap()).unwrap();
        for m in [&a, &centered] {
            let oracle = op_norm_oracle(&to_vecs(m));
            let got = operator_norm(m);
            assert!((got - oracle).abs() <= 1e-9 * oracle, "seed {seed}: {got} vs {oracle}");
        }
    }
}

#[test]
fn projection_residual_is_tail_energy() {
    // ‖A − Â‖_F² = Σ_{i>k} σ_i².
    for seed in 0..20u64 {
        let m = uniform_matrix(15, 6, 100 + seed);
        let sv = singular_values(&to_vecs(&m));
        for k in 1..=5 {
            let p = top_k_projection(&m, k).unwrap();
            let resid = frobenius_norm(&m.sub(&p.values).unwrap()).powi(2);
            let tail: f64 = sv[k..].iter().map(|s| s * s).sum();
            assert!((resid - tail).abs() <= 1e-8 * (1.0 + tail), "k={k}: {resid} vs {tail}");
        }
    }
}

#[test]
fn eckart_young_against_random_rank_k() {
    // The rank-k projection is at least as close as any other rank-k matrix.
    let mut r = rng(9);
    for trial in 0..100u64 {
        let (n, d) = (12, 8);
        let k = 1 + (trial as usize % 4);
        let a = uniform_matrix(n, d, 1000 + trial);
        let c = random_rank_k(n, d, k, &mut r);
        let p = top_k_projection(&a, k).unwrap();
        let best = a.sub(&p.values).unwrap();
        let other = a.sub(&c).unwrap();
        assert!(operator_norm(&best) <= operator_norm(&other) + 1e-8, "trial {trial}");
        assert!(frobenius_norm(&best) <= frobenius_norm(&other) * (1.0 + 1e-12), "trial {trial}");
    }
}

#[test]
fn projection_cost_inequality_on_fuzzed_pairs() {
    // ‖Â − C‖_F² ≤ 8k‖A − C‖²_op for rank-k C.
    let mut r = rng(77);
    for trial in 0..100u64 {
        let n = 5 + (trial as usize % 20);
        let d = 3 + (trial as usize % 9);
        let k = 1 + (trial as usize % n.min(d));
        let c = random_rank_k(n, d, k, &mut r);
        // A is C plus noise of varying strength.
        let noise = 10f64.powi((trial % 5) as i32 - 2);
        let e = uniform_matrix(n, d, 5000 + trial).scaled(noise).unwrap();
        let a = DataMatrix::new(
            n,
            d,
            c.as_slice().iter().zip(e.as_slice()).map(|(x, y)| x + y).collect(),
        )
        .unwrap();
        let p = top_k_projection(&a, k).unwrap();
        let lhs = frobenius_norm(&p.values.sub(&c).unwrap()).powi(2);
        let op = op_norm_oracle(&sub(&to_vecs(&a), &to_vecs(&c)));
        let rhs = 8.0 * k as f64 * op * op;
        assert!(lhs <= rhs * (1.0 + 1e-9), "trial {trial}: {lhs} > {rhs}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn norm_ordering(n in 1usize..12, d in 1usize..12, seed in 0u64..1000) {
        let m = uniform_matrix(n, d, seed);
        let op = operator_norm(&m);
        let fro = frobenius_norm(&m);
        let rank = n.min(d) as f64;
        prop_assert!(op <= fro * (1.0 + 1e-9));
        prop_assert!(fro <= rank.sqrt() * op * (1.0 + 1e-9));
    }

    #[test]
    fn row_subset_never_increases_operator_norm(n in 2usize..15, d in 1usize..8, seed in 0u64..1000) {
        let m = uniform_matrix(n, d, seed);
        let keep: Vec<usize> = (0..n).filter(|i| (i + seed as usize) % 3 != 0).collect();
        prop_assume!(!keep.is_empty());
        let s = m.select_rows(&keep).unwrap();
        prop_assert!(operator_norm(&s) <= operator_norm(&m) * (1.0 + 1e-9));
    }

    #[test]
    fn operator_norm_scales_linearly(seed in 0u64..1000, alpha in -50.0f64..50.0) {
        let m = uniform_matrix(6, 4, seed);
        let scaled = operator_norm(&m.scaled(alpha).unwrap());
        prop_assert!((scaled - alpha.abs() * operator_norm(&m)).abs() <= 1e-8 * (1.0 + scaled));
    }
}

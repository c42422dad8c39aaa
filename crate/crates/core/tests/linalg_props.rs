use ire_core::linalg::{kth_smallest_abs, spectral_projector, sym_eigh, SymMatrix};
use proptest::prelude::*;

fn sym_matrix(max_dim: usize) -> impl Strategy<Value = SymMatrix> {
    (2..=max_dim).prop_flat_map(|p| {
        prop::collection::vec(-10.0f64..10.0, p * p)
            .prop_map(move |data| SymMatrix::new(p, data).unwrap())
    })
}

/// Power iteration on `A + sI` for the largest eigenvalue; oracle for small
/// matrices independent of the Jacobi sweeps.
fn power_top_eigenvalue(a: &SymMatrix) -> f64 {
    let p = a.dim();
    let shift = a.frobenius_norm();
    let mut x: Vec<f64> = (0..p).map(|i| 1.0 + 0.1 * i as f64).collect();
    let mut lambda = 0.0;
    for _ in 0..20000 {
        let mut y = a.matvec(&x);
        for (yi, xi) in y.iter_mut().zip(&x) {
            *yi += shift * xi;
        }
        let n = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        let next: Vec<f64> = y.iter().map(|v| v / n).collect();
        let ax = a.matvec(&next);
        let rq: f64 = next.iter().zip(&ax).map(|(a, b)| a * b).sum();
        if (rq - lambda).abs() < 1e-15 * (1.0 + rq.abs()) {
            return rq;
        }
        lambda = rq;
        x = next;
    }
    lambda
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn eigen_decomposition_is_accurate(a in sym_matrix(64)) {
        let e = sym_eigh(&a).unwrap();
        let scale = a.frobenius_norm().max(1.0);
        prop_assert!(e.reconstruction_residual(&a) <= 1e-8 * scale);
        prop_assert!(e.orthonormality_residual() <= 1e-10);
        prop_assert!(e.eigvals.windows(2).all(|w| w[0] >= w[1]));
        let sum: f64 = e.eigvals.iter().sum();
        prop_assert!((sum - a.trace()).abs() <= 1e-9 * scale);
    }

    #[test]
    fn projectors_split_the_identity(a in sym_matrix(12), cut in 1usize..11) {
        let p = a.dim();
        let m = cut.min(p - 1);
        let e = sym_eigh(&a).unwrap();
        let top = spectral_projector(&e, 1, m).unwrap();
        let bottom = spectral_projector(&e, m + 1, p).unwrap();
        for i in 0..p {
            for j in 0..p {
                let s = top.matrix().get(i, j) + bottom.matrix().get(i, j);
                let id = if i == j { 1.0 } else { 0.0 };
                prop_assert!((s - id).abs() <= 1e-8);
            }
        }
        let x: Vec<f64> = (0..p).map(|i| (i as f64).sin()).collect();
        let once = bottom.apply(&x);
        let twice = bottom.apply(&once);
        for (u, v) in once.iter().zip(&twice) {
            prop_assert!((u - v).abs() <= 1e-10);
        }
    }

    #[test]
    fn small_matrix_top_eigenvalue_matches_power_iteration(a in sym_matrix(4)) {
        let e = sym_eigh(&a).unwrap();
        let oracle = power_top_eigenvalue(&a);
        prop_assert!((e.eigvals[0] - oracle).abs() <= 1e-7 * a.frobenius_norm().max(1.0),
            "jacobi {} power {}", e.eigvals[0], oracle);
    }

    #[test]
    fn kth_smallest_matches_sort(
        h in prop::collection::vec(prop_oneof![-5.0f64..5.0, (-3i32..=3).prop_map(f64::from)], 1..40),
        k_seed in 0usize..1000,
    ) {
        let k = 1 + k_seed % h.len();
        let mut sorted: Vec<f64> = h.iter().map(|x| x.abs()).collect();
        sorted.sort_by(f64::total_cmp);
        prop_assert_eq!(kth_smallest_abs(&h, k).unwrap(), sorted[k - 1]);
    }
}

#[test]
fn kth_smallest_thousand_vectors() {
    use proptest::test_runner::{Config, TestRunner};
    let mut runner = TestRunner::new(Config {
        cases: 1000,
        ..Config::default()
    });
    runner
        .run(
            &(prop::collection::vec(-100.0f64..100.0, 1..64), 0usize..64),
            |(h, k)| {
                let k = 1 + k % h.len();
                let mut sorted: Vec<f64> = h.iter().map(|x| x.abs()).collect();
                sorted.sort_by(f64::total_cmp);
                prop_assert_eq!(kth_smallest_abs(&h, k).unwrap(), sorted[k - 1]);
                Ok(())
            },
        )
        .unwrap();
}

#[test]
fn two_by_two_closed_form() {
    // [[a, b], [b, c]] has eigenvalues (a + c)/2 ± sqrt(((a - c)/2)² + b²).
    let (a, b, c) = (2.0, -0.75, -1.5);
    let m = SymMatrix::new(2, vec![a, b, b, c]).unwrap();
    let e = sym_eigh(&m).unwrap();
    let mid = (a + c) / 2.0;
    let rad = (((a - c) / 2.0f64).powi(2) + b * b).sqrt();
    assert!((e.eigvals[0] - (mid + rad)).abs() < 1e-14);
    assert!((e.eigvals[1] - (mid - rad)).abs() < 1e-14);
}

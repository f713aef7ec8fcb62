use proptest::prelude::*;
use semicont::linalg::{cholesky, min_eigenvalue, psd_project, sym_eigen, SymMatrix};

fn sym(max_dim: usize) -> impl Strategy<Value = SymMatrix> {
    (1..=max_dim).prop_flat_map(|n| {
        prop::collection::vec(-10.0..10.0f64, n * n)
            .prop_map(move |v| SymMatrix::from_lower_fn(n, |i, j| 0.5 * (v[i * n + j] + v[j * n + i])))
    })
}

fn fro_dist(a: &SymMatrix, b: &SymMatrix) -> f64 {
    a.sub(b).norm_fro()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn eigen_reconstructs_with_orthonormal_vectors(m in sym(20)) {
        let d = sym_eigen(&m).unwrap();
        let n = m.dim();
        let err = d.reconstruct().sub(&m).max_abs();
        prop_assert!(err <= 1e-9 * (1.0 + m.norm_inf()), "reconstruction {err:e}");
        let vtv = d.vectors.transpose().matmul(&d.vectors);
        for i in 0..n {
            for j in 0..n {
                let want = if i == j { 1.0 } else { 0.0 };
                prop_assert!((vtv.get(i, j) - want).abs() <= 1e-10);
            }
        }
        prop_assert!(d.values.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn eigenvalues_follow_identity_shift(m in sym(20), eps in -5.0..5.0f64) {
        let n = m.dim();
        let shifted = m.add(&SymMatrix::identity(n).scaled(eps));
        let a = sym_eigen(&m).unwrap().values;
        let b = sym_eigen(&shifted).unwrap().values;
        for k in 0..n {
            prop_assert!((b[k] - a[k] - eps).abs() <= 1e-9 * (1.0 + m.norm_inf()));
        }
    }

    #[test]
    fn psd_projection_is_idempotent_and_nonexpansive(a in sym(12), seed in any::<u64>()) {
        let n = a.dim();
        let mut s = seed;
        let mut next = || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) * 20.0 - 10.0
        };
        let b = SymMatrix::from_lower_fn(n, |_, _| next());
        let pa = psd_project(&a).unwrap();
        let pb = psd_project(&b).unwrap();
        let scale = 1.0 + a.norm_fro();
        prop_assert!(min_eigenvalue(&pa).unwrap() >= -1e-9 * scale);
        prop_assert!(fro_dist(&psd_project(&pa).unwrap(), &pa) <= 1e-9 * scale);
        prop_assert!(fro_dist(&pa, &pb) <= fro_dist(&a, &b) * (1.0 + 1e-12) + 1e-9 * scale);
    }

    #[test]
    fn cholesky_succeeds_exactly_on_positive_definite(m in sym(15), shift in -3.0..3.0f64) {
        let n = m.dim();
        let lam0 = min_eigenvalue(&m).unwrap();
        let m = m.add(&SymMatrix::identity(n).scaled(shift - lam0));
        let lam = min_eigenvalue(&m).unwrap();
        let tol = 1e-10 * (1.0 + m.norm_inf());
        prop_assume!(!(lam > -1e-12 * (1.0 + m.norm_inf()) && lam <= tol));
        prop_assert_eq!(cholesky(&m).is_ok(), lam > tol, "min eigenvalue {:e}", lam);
    }
}

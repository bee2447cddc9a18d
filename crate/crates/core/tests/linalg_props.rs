use fedrep_core::linalg::{self, Matrix, Vector};
use proptest::prelude::*;

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Matrix> {
    prop::collection::vec(-3.0f64..3.0, rows * cols)
        .prop_map(move |v| Matrix::from_row_slice(rows, cols, &v))
}

fn tall() -> impl Strategy<Value = Matrix> {
    (2usize..9)
        .prop_flat_map(|rows| (Just(rows), 1..=rows))
        .prop_flat_map(|(rows, cols)| matrix(rows, cols))
}

/// Random orthogonal `d × d` matrix from the QR of a Gaussian-like fill.
fn rotation(d: usize) -> impl Strategy<Value = Matrix> {
    matrix(d, d).prop_filter_map("singular fill", |a| {
        let qr = a.qr();
        let r = qr.r();
        (0..r.ncols())
            .all(|i| r[(i, i)].abs() > 1e-3)
            .then(|| qr.q())
    })
}

fn well_conditioned(a: &Matrix) -> bool {
    let s = a.clone().singular_values();
    s.min() > 1e-3 * s.max().max(1.0)
}

proptest! {
    #[test]
    fn qr_reconstructs_with_orthonormal_q(a in tall().prop_filter("rank", well_conditioned)) {
        let res = linalg::qr_decompose(&a).unwrap();
        let q = res.q.matrix();
        prop_assert!((q * &res.r - &a).amax() <= 1e-10 * a.amax().max(1.0));
        prop_assert!(linalg::orthonormality_deviation(q) <= 1e-12);
        prop_assert!(linalg::is_upper_triangular(&res.r));
        for i in 0..res.r.ncols() {
            prop_assert!(res.r[(i, i)] >= 0.0);
        }
    }

    #[test]
    fn distance_is_rotation_invariant_and_symmetric(
        (b1, b2, rot) in (3usize..8).prop_flat_map(|d| (1..d).prop_flat_map(move |k| {
            (matrix(d, k), matrix(d, k), rotation(d))
        }))
    ) {
        prop_assume!(well_conditioned(&b1) && well_conditioned(&b2));
        let dist = linalg::principal_angle_distance(&b1, &b2).unwrap();
        let back = linalg::principal_angle_distance(&b2, &b1).unwrap();
        let rotated = linalg::principal_angle_distance(&(&rot * &b1), &(&rot * &b2)).unwrap();
        prop_assert!((0.0..=1.0 + 1e-12).contains(&dist));
        prop_assert!((dist - back).abs() <= 1e-9);
        prop_assert!((dist - rotated).abs() <= 1e-9);
        prop_assert!(linalg::principal_angle_distance(&b1, &b1).unwrap() <= 1e-7);
    }

    #[test]
    fn least_squares_matches_normal_equations(
        (a, b) in (2usize..10).prop_flat_map(|rows| (1..=rows).prop_flat_map(move |cols| {
            (matrix(rows, cols), prop::collection::vec(-3.0f64..3.0, rows))
        }))
    ) {
        prop_assume!(well_conditioned(&a));
        let b = Vector::from_vec(b);
        let x = linalg::least_squares_vec(&a, &b).unwrap();
        let gram = a.transpose() * &a;
        let oracle = gram.cholesky().unwrap().solve(&(a.transpose() * &b));
        let s = a.clone().singular_values();
        let cond = s.max() / s.min();
        prop_assert!((&x - &oracle).amax() <= 1e-11 * cond * cond * oracle.amax().max(1.0));
    }

    #[test]
    fn singular_values_match_gram_eigenvalues(a in tall()) {
        let mut sv = linalg::singular_values(&a);
        sv.sort_by(|x, y| y.total_cmp(x));
        let eig = (a.transpose() * &a).symmetric_eigen();
        let mut ev: Vec<f64> = eig.eigenvalues.iter().map(|e| e.max(0.0).sqrt()).collect();
        ev.sort_by(|x, y| y.total_cmp(x));
        prop_assert_eq!(sv.len(), ev.len());
        let scale = ev[0].max(1.0);
        for (s, e) in sv.iter().zip(&ev) {
            prop_assert!((s - e).abs() <= 1e-6 * scale, "{} vs {}", s, e);
        }
    }

    #[test]
    fn orthonormal_columns_have_unit_singular_values(a in tall().prop_filter("rank", well_conditioned)) {
        let q = linalg::orthonormalize(&a).unwrap();
        for s in linalg::singular_values(q.matrix()) {
            prop_assert!((s - 1.0).abs() <= 1e-12);
        }
        prop_assert!((linalg::spectral_norm(q.matrix()) - 1.0).abs() <= 1e-12);
    }
}

use nalgebra::DMatrix;
use ndarray::Array2;
use oodg_core::linalg::{cholesky, cholesky_inverse, right_svd};
use proptest::prelude::*;

fn matrix(max_rows: usize, max_cols: usize) -> impl Strategy<Value = Array2<f64>> {
    (1..=max_rows, 1..=max_cols).prop_flat_map(|(r, c)| {
        prop::collection::vec(-10.0f64..10.0, r * c)
            .prop_map(move |d| Array2::from_shape_vec((r, c), d).unwrap())
    })
}

fn to_na(a: &Array2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn singular_values_match_nalgebra(a in matrix(12, 8)) {
        let ours = right_svd(a.view());
        let mut theirs: Vec<f64> = to_na(&a).singular_values().iter().copied().collect();
        theirs.sort_by(|x, y| y.partial_cmp(x).unwrap());
        let scale = theirs.first().copied().unwrap_or(0.0).max(1.0);
        for (k, s) in theirs.iter().enumerate() {
            prop_assert!((ours.singular_values[k] - s).abs() <= 1e-10 * scale);
        }
        // Values beyond the rank of a wide matrix are zero.
        for s in ours.singular_values.iter().skip(theirs.len()) {
            prop_assert!(s.abs() <= 1e-10 * scale);
        }
        let gram = ours.v.t().dot(&ours.v) - Array2::<f64>::eye(a.ncols());
        prop_assert!(gram.iter().all(|e| e.abs() <= 1e-10));
    }

    #[test]
    fn cholesky_inverse_matches_nalgebra(a in matrix(10, 6)) {
        let c = a.ncols();
        let spd = a.t().dot(&a) + Array2::<f64>::eye(c);
        let l = cholesky(spd.view()).unwrap();
        prop_assert!((l.dot(&l.t()) - &spd).iter().all(|e| e.abs() <= 1e-9));
        let ours = cholesky_inverse(l.view());
        let theirs = to_na(&spd).try_inverse().unwrap();
        for i in 0..c {
            for j in 0..c {
                prop_assert!((ours[[i, j]] - theirs[(i, j)]).abs() <= 1e-10 * (1.0 + theirs[(i, j)].abs()));
            }
        }
    }
}

#[test]
fn cholesky_rejects_indefinite() {
    let a = Array2::from_shape_vec((2, 2), vec![1.0, 2.0, 2.0, 1.0]).unwrap();
    assert!(cholesky(a.view()).is_err());
}

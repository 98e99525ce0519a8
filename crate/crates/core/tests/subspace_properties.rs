use ndarray::Array2;
use oodg_core::subspace::{
    component_discriminability, pca_fit, project_about_mean, project_orthogonal, select_nuisance,
};
use oodg_core::FeatureSet64;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn gaussian(seed: u64, rows: usize, cols: usize) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_simple_fn((rows, cols), || StandardNormal.sample(&mut rng))
}

/// Anisotropic data so that the PCA components are well separated.
fn data(seed: u64, n: usize, c: usize) -> FeatureSet64 {
    let scale = Array2::from_diag(&ndarray::Array1::from_shape_fn(c, |i| {
        3.0 / (i as f64 + 1.0)
    }));
    FeatureSet64::from_matrix(gaussian(seed, n, c).dot(&scale) + 1.5, "l").unwrap()
}

fn fitted(seed: u64, c: usize, k: usize) -> oodg_core::SubspaceModel64 {
    let id = data(seed, 60, c);
    let sim = data(seed ^ 1, 20, c);
    let diss = FeatureSet64::from_matrix(data(seed ^ 2, 20, c).matrix() + 2.0, "l").unwrap();
    let pca = pca_fit(&id).unwrap();
    let scores = component_discriminability(&pca, &sim, &diss).unwrap();
    select_nuisance(&pca.with_discriminability(scores).unwrap(), k).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn projection_is_idempotent_and_contracting(seed in any::<u64>(), (c, k) in (2usize..10).prop_flat_map(|c| (Just(c), 0..=c))) {
        let model = fitted(seed, c, k);
        let f = data(seed ^ 3, 25, c);
        let once = project_orthogonal(&f, &model).unwrap();
        let twice = project_orthogonal(&once, &model).unwrap();
        for (a, b) in once.matrix().iter().zip(twice.matrix().iter()) {
            prop_assert!((a - b).abs() <= 1e-10);
        }
        for (p, o) in once.matrix().rows().into_iter().zip(f.matrix().rows()) {
            prop_assert!(p.dot(&p).sqrt() <= o.dot(&o).sqrt() * (1.0 + 1e-12));
        }
    }

    #[test]
    fn k_zero_projection_is_identity(seed in any::<u64>(), c in 2usize..10) {
        let model = fitted(seed, c, 0);
        let f = data(seed ^ 4, 10, c);
        let plain = project_orthogonal(&f, &model).unwrap();
        let anchored = project_about_mean(&f, &model).unwrap();
        prop_assert_eq!(plain.matrix(), f.matrix());
        prop_assert_eq!(anchored.matrix(), f.matrix());
    }

    #[test]
    fn full_reconstruction_recovers_centred_data(seed in any::<u64>(), c in 1usize..10, n in 2usize..40) {
        let f = data(seed, n, c);
        let model = pca_fit(&f).unwrap();
        let coeffs = model.coefficients(&f).unwrap();
        let back = coeffs.dot(&model.basis().t());
        let centred = f.matrix() - model.mean();
        for (a, b) in back.iter().zip(centred.iter()) {
            prop_assert!((a - b).abs() <= 1e-8);
        }
    }

    #[test]
    fn discriminability_invariant_under_increasing_maps(seed in any::<u64>(), c in 2usize..6) {
        // An increasing map applied along every axis, after moving to a frame
        // where the PCA basis is the identity, leaves per-component ranks intact.
        let id = data(seed, 50, c);
        let pca = pca_fit(&id).unwrap();
        let sim = data(seed ^ 5, 15, c);
        let diss = FeatureSet64::from_matrix(data(seed ^ 6, 15, c).matrix() * 1.7, "l").unwrap();
        let base = component_discriminability(&pca, &sim, &diss).unwrap();
        let warp = |fs: &FeatureSet64| {
            let coeffs = pca.coefficients(fs).unwrap().mapv(|v| v.powi(3) + v);
            fs.with_matrix(coeffs.dot(&pca.basis().t()) + pca.mean()).unwrap()
        };
        let warped = component_discriminability(&pca, &warp(&sim), &warp(&diss)).unwrap();
        for (a, b) in base.iter().zip(&warped) {
            prop_assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }
}

use ndarray::{Array1, Array2};
use oodg_core::linalg::orthonormalize_columns;
use oodg_core::scorers::{fit_scorer, score_samples, ScorerState};
use oodg_core::{FeatureSet64, HeadWeights64, Method, ScorerConfig};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || StandardNormal.sample(rng))
}

fn rotation(rng: &mut ChaCha8Rng, c: usize) -> Array2<f64> {
    orthonormalize_columns(gaussian(rng, c, c).view()).unwrap()
}

/// Two shifted clusters with labels.
fn labelled(seed: u64, n: usize, c: usize) -> FeatureSet64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = gaussian(&mut rng, 2 * n, c);
    for mut row in x.rows_mut().into_iter().skip(n) {
        row[0] += 3.0;
    }
    let labels = (0..2 * n).map(|i| i / n).collect();
    FeatureSet64::from_matrix(x, "l")
        .unwrap()
        .with_class_labels(labels, 2)
        .unwrap()
}

fn head(seed: u64, k: usize, c: usize) -> HeadWeights64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    HeadWeights64::new(
        gaussian(&mut rng, k, c),
        gaussian(&mut rng, 1, k).row(0).to_owned(),
    )
    .unwrap()
}

fn scores(
    cfg: &ScorerConfig,
    train: &FeatureSet64,
    test: &FeatureSet64,
    head: Option<&HeadWeights64>,
) -> Array1<f64> {
    score_samples(&fit_scorer(cfg, train, head).unwrap(), test)
        .unwrap()
        .scores
}

fn rel_close(a: &Array1<f64>, b: &Array1<f64>, tol: f64) -> Result<(), TestCaseError> {
    for (x, y) in a.iter().zip(b) {
        let scale = x.abs().max(y.abs()).max(1.0);
        prop_assert!((x - y).abs() <= tol * scale, "{x} vs {y}");
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn mahalanobis_peaks_at_class_means(seed in any::<u64>(), c in 1usize..6) {
        let train = labelled(seed, 30, c);
        let model = fit_scorer(&ScorerConfig::new(Method::Mahalanobis), &train, None).unwrap();
        let ScorerState::Mahalanobis(m) = model.state() else { unreachable!() };
        for mean in &m.class_means {
            prop_assert!(model.score_one(mean.view()).unwrap().abs() < 1e-9);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let probe = gaussian(&mut rng, 20, c) * 3.0;
        for row in probe.rows() {
            prop_assert!(model.score_one(row).unwrap() <= 1e-12);
        }
    }

    #[test]
    fn mahalanobis_invariant_under_linear_maps(seed in any::<u64>(), c in 1usize..6) {
        let train = labelled(seed, 40, c);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 2);
        let test = FeatureSet64::from_matrix(gaussian(&mut rng, 25, c) * 2.0, "l").unwrap();
        // A = Q diag(s) Rᵀ with singular values in [0.5, 2].
        let q = rotation(&mut rng, c);
        let r = rotation(&mut rng, c);
        let s = Uniform::new(0.5, 2.0).unwrap();
        let diag = Array2::from_diag(&Array1::from_shape_simple_fn(c, || s.sample(&mut rng)));
        let a = q.dot(&diag).dot(&r.t());
        let map = |fs: &FeatureSet64| fs.with_matrix(fs.matrix().dot(&a.t())).unwrap();
        let cfg = ScorerConfig::new(Method::Mahalanobis);
        rel_close(&scores(&cfg, &train, &test, None), &scores(&cfg, &map(&train), &map(&test), None), 1e-6)?;
    }

    #[test]
    fn neighbour_and_density_scores_invariant_under_rotation(seed in any::<u64>(), c in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let train = FeatureSet64::from_matrix(gaussian(&mut rng, 40, c), "l").unwrap();
        let test = FeatureSet64::from_matrix(gaussian(&mut rng, 15, c) * 1.5, "l").unwrap();
        let q = rotation(&mut rng, c);
        let rot = |fs: &FeatureSet64| fs.with_matrix(fs.matrix().dot(&q)).unwrap();
        for cfg in [
            ScorerConfig::new(Method::Knn).with("k", 3.0),
            ScorerConfig::new(Method::Lof).with("k", 5.0),
            ScorerConfig::new(Method::Kde),
        ] {
            rel_close(&scores(&cfg, &train, &test, None), &scores(&cfg, &rot(&train), &rot(&test), None), 1e-9)?;
        }
    }

    #[test]
    fn duplicating_a_training_point_never_lowers_knn(seed in any::<u64>(), c in 1usize..5, k in 1usize..6, dup in 0usize..30) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = gaussian(&mut rng, 30, c);
        let train = FeatureSet64::from_matrix(x.clone(), "l").unwrap();
        let mut bigger = x.clone();
        bigger.push_row(x.row(dup)).unwrap();
        let bigger = FeatureSet64::from_matrix(bigger, "l").unwrap();
        let test = FeatureSet64::from_matrix(gaussian(&mut rng, 20, c), "l").unwrap();
        let cfg = ScorerConfig::new(Method::Knn).with("k", k as f64);
        let before = scores(&cfg, &train, &test, None);
        let after = scores(&cfg, &bigger, &test, None);
        for (b, a) in before.iter().zip(&after) {
            prop_assert!(a >= b);
        }
    }

    #[test]
    fn softmax_scores_bounded_and_odin_t1_is_mcp(seed in any::<u64>(), c in 1usize..6, k in 2usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let train = FeatureSet64::from_matrix(gaussian(&mut rng, 10, c), "l").unwrap();
        let test = FeatureSet64::from_matrix(gaussian(&mut rng, 30, c) * 4.0, "l").unwrap();
        let h = head(seed ^ 3, k, c);
        let mcp = scores(&ScorerConfig::new(Method::Mcp), &train, &test, Some(&h));
        let odin1 = scores(&ScorerConfig::new(Method::OdinT).with("T", 1.0), &train, &test, Some(&h));
        let odin10 = scores(&ScorerConfig::new(Method::OdinT).with("T", 10.0), &train, &test, Some(&h));
        prop_assert_eq!(&mcp, &odin1);
        for &v in mcp.iter().chain(odin10.iter()) {
            prop_assert!(v > 1.0 / k as f64 && v <= 1.0, "{v}");
        }
    }

    #[test]
    fn react_below_threshold_is_plain_energy(seed in any::<u64>(), c in 1usize..6, k in 2usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let train = FeatureSet64::from_matrix(gaussian(&mut rng, 40, c), "l").unwrap();
        let h = head(seed ^ 4, k, c);
        let model = fit_scorer(&ScorerConfig::new(Method::ReAct).with("p", 0.9), &train, Some(&h)).unwrap();
        let ScorerState::ReAct(r) = model.state() else { unreachable!() };
        // Every test activation sits below the clip threshold.
        let test = gaussian(&mut rng, 20, c).mapv(|v: f64| r.threshold - 0.01 - v.abs());
        for row in test.rows() {
            let logits = h.logits(row);
            let max = logits.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            let energy = max + logits.mapv(|l| (l - max).exp()).sum().ln();
            let got = model.score_one(row).unwrap();
            prop_assert!((got - energy).abs() <= 1e-12 * energy.abs().max(1.0));
        }
    }

    #[test]
    fn residual_with_full_dimension_is_zero(seed in any::<u64>(), c in 2usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let train = FeatureSet64::from_matrix(gaussian(&mut rng, 30, c), "l").unwrap();
        let test = FeatureSet64::from_matrix(gaussian(&mut rng, 10, c) * 10.0, "l").unwrap();
        let s = scores(&ScorerConfig::new(Method::Residual).with("D", c as f64), &train, &test, None);
        prop_assert!(s.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn every_scorer_is_finite_on_finite_input(seed in any::<u64>(), c in 2usize..6) {
        let train = labelled(seed, 25, c);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 5);
        let test = FeatureSet64::from_matrix(gaussian(&mut rng, 15, c) * 5.0 + 0.1, "l").unwrap();
        let h = head(seed ^ 6, 3, c);
        for m in Method::ALL {
            let mut cfg = ScorerConfig::default_for(m);
            if cfg.params.contains_key("D") {
                cfg = cfg.with("D", c as f64);
            }
            let s = scores(&cfg, &train, &test, Some(&h));
            prop_assert!(s.iter().all(|v| v.is_finite()), "{m}");
        }
    }
}

#[test]
fn mahalanobis_pooled_covariance_ignores_class_offsets() {
    // Class offsets along an axis must not inflate the shared covariance.
    let train = labelled(7, 200, 2);
    let model = fit_scorer(&ScorerConfig::new(Method::Mahalanobis), &train, None).unwrap();
    let ScorerState::Mahalanobis(m) = model.state() else {
        unreachable!()
    };
    assert!((m.class_means[1][0] - m.class_means[0][0] - 3.0).abs() < 0.3);
    assert!(
        m.precision[[0, 0]] > 0.7 && m.precision[[0, 0]] < 1.4,
        "{:?}",
        m.precision
    );
}

use ndarray::{Array1, Array2};
use oodg_core::data::{
    decode_activation_dump, decode_feature_dump, encode_activation_dump, encode_feature_dump,
    global_average_pool, load_feature_dump, save_feature_dump,
};
use oodg_core::{FeatureSet, HeadWeights, RawActivationTensor};
use proptest::prelude::*;

fn finite_f32() -> impl Strategy<Value = f32> {
    prop_oneof![
        -1e6f32..1e6f32,
        Just(0.0f32),
        Just(-0.0f32),
        Just(f32::MIN_POSITIVE),
        Just(f32::MAX),
        Just(f32::MIN),
    ]
}

fn feature_dump() -> impl Strategy<Value = (FeatureSet<f32>, Option<HeadWeights<f32>>)> {
    (0usize..12, 1usize..9, prop::option::of(1usize..5)).prop_flat_map(|(n, c, k)| {
        let head = match k {
            Some(k) => (
                prop::collection::vec(finite_f32(), k * c),
                prop::collection::vec(finite_f32(), k),
            )
                .prop_map(move |(w, b)| {
                    Some(
                        HeadWeights::new(
                            Array2::from_shape_vec((k, c), w).unwrap(),
                            Array1::from(b),
                        )
                        .unwrap(),
                    )
                })
                .boxed(),
            None => Just(None).boxed(),
        };
        (prop::collection::vec(finite_f32(), n * c), head).prop_map(move |(v, head)| {
            let fs = FeatureSet::from_matrix(Array2::from_shape_vec((n, c), v).unwrap(), "layer")
                .unwrap();
            (fs, head)
        })
    })
}

fn tensor(dims: [usize; 4]) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-100.0f64..100.0, dims.iter().product::<usize>())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn feature_dump_round_trip_is_byte_exact((fs, head) in feature_dump()) {
        let bytes = encode_feature_dump(&fs, head.as_ref()).unwrap();
        let (back, back_head) = decode_feature_dump::<f32>(&bytes, "layer").unwrap();
        prop_assert_eq!(&back, &fs);
        prop_assert_eq!(&back_head, &head);
        prop_assert_eq!(encode_feature_dump(&back, back_head.as_ref()).unwrap(), bytes);
    }

    #[test]
    fn activation_dump_round_trip_is_byte_exact(
        dims in (0usize..4, 1usize..4, 1usize..4, 1usize..4),
        seed in any::<u64>(),
    ) {
        let dims = [dims.0, dims.1, dims.2, dims.3];
        let count: usize = dims.iter().product();
        let values: Vec<f32> = (0..count).map(|i| ((seed.wrapping_mul(i as u64 + 1) % 2001) as f32 - 1000.0) / 7.0).collect();
        let t = RawActivationTensor::new("act", dims, values).unwrap();
        let bytes = encode_activation_dump(&t, None).unwrap();
        let (back, _) = decode_activation_dump::<f32>(&bytes, "act").unwrap();
        prop_assert_eq!(&back, &t);
        prop_assert_eq!(encode_activation_dump(&back, None).unwrap(), bytes);
    }

    #[test]
    fn pooling_is_linear(
        (dims, t1, t2) in (1usize..4, 1usize..4, 1usize..4, 1usize..4)
            .prop_flat_map(|(n, c, h, w)| {
                let d = [n, c, h, w];
                (Just(d), tensor(d), tensor(d))
            }),
        a in -10.0f64..10.0,
        b in -10.0f64..10.0,
    ) {
        let combined: Vec<f64> = t1.iter().zip(&t2).map(|(x, y)| a * x + b * y).collect();
        let p = global_average_pool(&RawActivationTensor::new("l", dims, combined).unwrap()).unwrap();
        let p1 = global_average_pool(&RawActivationTensor::new("l", dims, t1).unwrap()).unwrap();
        let p2 = global_average_pool(&RawActivationTensor::new("l", dims, t2).unwrap()).unwrap();
        let expected = p1.matrix() * a + p2.matrix() * b;
        for (x, y) in p.matrix().iter().zip(expected.iter()) {
            prop_assert!((x - y).abs() <= 1e-10, "{x} vs {y}");
        }
    }

    #[test]
    fn pooling_ignores_spatial_order(
        (dims, values) in (1usize..4, 1usize..4, 1usize..4, 1usize..5)
            .prop_flat_map(|(n, c, h, w)| {
                let d = [n, c, h, w];
                (Just(d), tensor(d))
            }),
        perm_seed in any::<u64>(),
    ) {
        let [n, c, h, w] = dims;
        let hw = h * w;
        // One spatial permutation shared by every (sample, channel) plane.
        let mut perm: Vec<usize> = (0..hw).collect();
        let mut s = perm_seed;
        for i in (1..hw).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            perm.swap(i, (s >> 33) as usize % (i + 1));
        }
        let mut permuted = values.clone();
        for plane in 0..n * c {
            for (dst, &src) in perm.iter().enumerate() {
                permuted[plane * hw + dst] = values[plane * hw + src];
            }
        }
        let a = global_average_pool(&RawActivationTensor::new("l", dims, values).unwrap()).unwrap();
        let b = global_average_pool(&RawActivationTensor::new("l", dims, permuted).unwrap()).unwrap();
        for (x, y) in a.matrix().iter().zip(b.matrix().iter()) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
    }
}

#[test]
fn file_round_trip_with_head() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("train.penultimate.oodg");
    let fs = FeatureSet::from_matrix(ndarray::array![[1.5f32, -2.0], [0.25, 8.0]], "x").unwrap();
    let head = HeadWeights::new(
        ndarray::array![[1.0f32, 0.0], [0.0, 1.0], [1.0, 1.0]],
        ndarray::array![0.0, 0.5, -1.0],
    )
    .unwrap();
    save_feature_dump(&fs, Some(&head), &path).unwrap();
    let (back, back_head) = load_feature_dump::<f32>(&path).unwrap();
    assert_eq!(back.layer_name(), "penultimate");
    assert_eq!(back.matrix(), fs.matrix());
    assert_eq!(back_head.unwrap(), head);
}

use evhar_tensor::*;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn volume() -> impl Strategy<Value = (Vec<usize>, Vec<f64>)> {
    (1usize..3, 1usize..3, 1usize..4, 1usize..4, 1usize..4).prop_flat_map(|(b, c, t, h, w)| {
        let shape = vec![b, c, t, 2 * h, 2 * w];
        let n: usize = shape.iter().product();
        (Just(shape), prop::collection::vec(-5.0f64..5.0, n))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn same_padding_and_pooling_shapes((shape, data) in volume()) {
        let x = Tensor::from_vec(&shape, data).unwrap();
        let c = shape[1];
        let (y, _) = conv3d(&x, &Tensor::filled(&[3, c, 3, 3, 3], 0.1), &Tensor::zeros(&[3])).unwrap();
        prop_assert_eq!(&y.shape()[2..], &shape[2..]);
        let mut rs = RunningStats::new(3);
        let (z, _) = batchnorm3d(&y, &Tensor::filled(&[3], 1.0), &Tensor::zeros(&[3]), &mut rs, Mode::Train, 0.1, 1e-5).unwrap();
        prop_assert_eq!(z.shape(), y.shape());
        let (p, _) = maxpool3d(&z).unwrap();
        prop_assert_eq!(p.shape(), &[shape[0], 3, shape[2], shape[3] / 2, shape[4] / 2][..]);
    }

    #[test]
    fn softmax_rows_sum_to_one(rows in 1usize..6, k in 1usize..9, seed in any::<u64>()) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x64 = Tensor::<f64>::from_fn(&[rows, k], |_| rng.gen_range(-50.0..50.0));
        for row in softmax(&x64).unwrap().data().chunks(k) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let x32: Tensor<f32> = x64.cast();
        for row in softmax(&x32).unwrap().data().chunks(k) {
            prop_assert!((row.iter().sum::<f32>() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn dropout_identities((shape, data) in volume(), rate in 0.0f64..0.99, seed in any::<u64>()) {
        let x = Tensor::from_vec(&shape, data).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        prop_assert_eq!(&dropout(&x, rate, Mode::Eval, &mut rng).unwrap().0, &x);
        prop_assert_eq!(&dropout(&x, 0.0, Mode::Train, &mut rng).unwrap().0, &x);
    }

    #[test]
    fn conv_is_deterministic((shape, data) in volume()) {
        let x = Tensor::from_vec(&shape, data).unwrap();
        let w = Tensor::from_fn(&[2, shape[1], 3, 3, 3], |i| (i as f64).sin());
        let a = conv3d(&x, &w, &Tensor::zeros(&[2])).unwrap().0;
        let b = conv3d(&x, &w, &Tensor::zeros(&[2])).unwrap().0;
        prop_assert_eq!(a.data(), b.data());
    }
}

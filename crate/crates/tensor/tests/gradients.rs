//! Finite-difference checks for every backward pass, 20 seeds each.

use evhar_tensor::gradcheck::{max_relative_error, numeric_gradient};
use evhar_tensor::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-5;
const TOL: f64 = 1e-6;
const SEEDS: u64 = 20;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

fn dot(a: &Tensor<f64>, b: &[f64]) -> f64 {
    a.data().iter().zip(b).map(|(x, y)| x * y).sum()
}

fn with(t: &Tensor<f64>, data: &[f64]) -> Tensor<f64> {
    Tensor::from_vec(t.shape(), data.to_vec()).unwrap()
}

#[test]
fn conv3d_gradients() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cin = 1 + (seed as usize % 2);
        let x = rand_tensor(&mut rng, &[2, cin, 3, 4, 4]);
        let w = rand_tensor(&mut rng, &[2, cin, 3, 3, 3]);
        let b = rand_tensor(&mut rng, &[2]);
        let r = rand_tensor(&mut rng, &[2, 2, 3, 4, 4]);
        let (_, cache) = conv3d(&x, &w, &b).unwrap();
        let g = conv3d_backward(cache, &r).unwrap();

        let loss = |x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>| {
            dot(&conv3d(x, w, b).unwrap().0, r.data())
        };
        let nx = numeric_gradient(x.data(), H, |d| loss(&with(&x, d), &w, &b));
        let nw = numeric_gradient(w.data(), H, |d| loss(&x, &with(&w, d), &b));
        let nb = numeric_gradient(b.data(), H, |d| loss(&x, &w, &with(&b, d)));
        let ex = max_relative_error(g.input.unwrap().data(), &nx);
        let ew = max_relative_error(g.weights.data(), &nw);
        let eb = max_relative_error(g.bias.data(), &nb);
        assert!(ex < TOL && ew < TOL && eb < TOL, "seed {seed}: {ex} {ew} {eb}");
    }
}

#[test]
fn conv3d_bias_gradient_is_grad_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let x = rand_tensor(&mut rng, &[3, 2, 2, 3, 3]);
    let w = rand_tensor(&mut rng, &[4, 2, 3, 3, 3]);
    let r = rand_tensor(&mut rng, &[3, 4, 2, 3, 3]);
    let (_, cache) = conv3d(&x, &w, &Tensor::zeros(&[4])).unwrap();
    let g = conv3d_backward(cache, &r).unwrap();
    for co in 0..4 {
        let mut s = 0.0;
        for n in 0..3 {
            s += r.data()[(n * 4 + co) * 18..(n * 4 + co + 1) * 18].iter().sum::<f64>();
        }
        assert!((g.bias.data()[co] - s).abs() < 1e-12);
    }
}

#[test]
fn conv3d_param_only_backward_agrees() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = rand_tensor(&mut rng, &[9, 1, 2, 4, 4]);
    let w = rand_tensor(&mut rng, &[3, 1, 3, 3, 3]);
    let r = rand_tensor(&mut rng, &[9, 3, 2, 4, 4]);
    let (_, c1) = conv3d(&x, &w, &Tensor::zeros(&[3])).unwrap();
    let (_, c2) = conv3d(&x, &w, &Tensor::zeros(&[3])).unwrap();
    let full = conv3d_backward(c1, &r).unwrap();
    let params = conv3d_backward_params(c2, &r).unwrap();
    assert!(params.input.is_none());
    assert_eq!(full.weights, params.weights);
    assert_eq!(full.bias, params.bias);
}

fn bn_check(mode: Mode) {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let x = rand_tensor(&mut rng, &[2, 3, 2, 3, 3]);
        let gamma = Tensor::from_fn(&[3], |_| rng.gen_range(0.5..1.5));
        let beta = rand_tensor(&mut rng, &[3]);
        let r = rand_tensor(&mut rng, x.shape());
        let mut stats = RunningStats::new(3);
        stats.mean = rand_tensor(&mut rng, &[3]);
        stats.var = Tensor::from_fn(&[3], |_| rng.gen_range(0.5..2.0));
        let frozen = stats.clone();

        let loss = |x: &Tensor<f64>, g: &Tensor<f64>, b: &Tensor<f64>| {
            let mut s = frozen.clone();
            dot(&batchnorm3d(x, g, b, &mut s, mode, 0.1, 1e-5).unwrap().0, r.data())
        };
        let mut s = frozen.clone();
        let (_, cache) = batchnorm3d(&x, &gamma, &beta, &mut s, mode, 0.1, 1e-5).unwrap();
        let g = batchnorm3d_backward(cache, &r).unwrap();
        let nx = numeric_gradient(x.data(), H, |d| loss(&with(&x, d), &gamma, &beta));
        let ng = numeric_gradient(gamma.data(), H, |d| loss(&x, &with(&gamma, d), &beta));
        let nb = numeric_gradient(beta.data(), H, |d| loss(&x, &gamma, &with(&beta, d)));
        let ex = max_relative_error(g.input.data(), &nx);
        let eg = max_relative_error(g.gamma.data(), &ng);
        let eb = max_relative_error(g.beta.data(), &nb);
        assert!(ex < TOL && eg < TOL && eb < TOL, "{mode:?} seed {seed}: {ex} {eg} {eb}");
    }
}

#[test]
fn batchnorm3d_train_gradients() {
    bn_check(Mode::Train);
}

#[test]
fn batchnorm3d_eval_gradients() {
    bn_check(Mode::Eval);
}

#[test]
fn relu_gradients_away_from_kink() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
        let x = Tensor::from_fn(&[3, 7], |_| {
            let m = rng.gen_range(0.01..1.0);
            if rng.gen_bool(0.5) {
                m
            } else {
                -m
            }
        });
        let r = rand_tensor(&mut rng, &[3, 7]);
        let (_, cache) = relu(&x);
        let g = relu_backward(cache, &r).unwrap();
        let n = numeric_gradient(x.data(), H, |d| dot(&relu(&with(&x, d)).0, r.data()));
        let e = max_relative_error(g.data(), &n);
        assert!(e < TOL, "seed {seed}: {e}");
    }
}

#[test]
fn maxpool3d_gradients() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(300 + seed);
        let shape = [2, 2, 2, 4, 4];
        // distinct values spaced far wider than the probe step
        let mut vals: Vec<f64> = (0..128).map(|i| i as f64 * 0.01).collect();
        for i in (1..vals.len()).rev() {
            vals.swap(i, rng.gen_range(0..=i));
        }
        let x = Tensor::from_vec(&shape, vals).unwrap();
        let r = rand_tensor(&mut rng, &[2, 2, 2, 2, 2]);
        let (_, cache) = maxpool3d(&x).unwrap();
        let g = maxpool3d_backward(cache, &r).unwrap();
        let n = numeric_gradient(x.data(), H, |d| dot(&maxpool3d(&with(&x, d)).unwrap().0, r.data()));
        let e = max_relative_error(g.data(), &n);
        assert!(e < TOL, "seed {seed}: {e}");
    }
}

#[test]
fn global_avg_pool_gradients() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(400 + seed);
        let x = rand_tensor(&mut rng, &[2, 3, 2, 2, 3]);
        let r = rand_tensor(&mut rng, &[2, 3]);
        let (_, cache) = global_avg_pool(&x).unwrap();
        let g = global_avg_pool_backward(cache, &r).unwrap();
        let n = numeric_gradient(x.data(), H, |d| {
            dot(&global_avg_pool(&with(&x, d)).unwrap().0, r.data())
        });
        let e = max_relative_error(g.data(), &n);
        assert!(e < TOL, "seed {seed}: {e}");
    }
}

#[test]
fn linear_gradients() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(500 + seed);
        let x = rand_tensor(&mut rng, &[4, 5]);
        let w = rand_tensor(&mut rng, &[3, 5]);
        let b = rand_tensor(&mut rng, &[3]);
        let r = rand_tensor(&mut rng, &[4, 3]);
        let (_, cache) = linear(&x, &w, &b).unwrap();
        let g = linear_backward(cache, &r).unwrap();
        let loss = |x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>| {
            dot(&linear(x, w, b).unwrap().0, r.data())
        };
        let nx = numeric_gradient(x.data(), H, |d| loss(&with(&x, d), &w, &b));
        let nw = numeric_gradient(w.data(), H, |d| loss(&x, &with(&w, d), &b));
        let nb = numeric_gradient(b.data(), H, |d| loss(&x, &w, &with(&b, d)));
        let e = max_relative_error(g.input.data(), &nx)
            .max(max_relative_error(g.weights.data(), &nw))
            .max(max_relative_error(g.bias.data(), &nb));
        assert!(e < TOL, "seed {seed}: {e}");
    }
}

#[test]
fn sigmoid_and_channel_scale_gradients() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(600 + seed);
        let feats = rand_tensor(&mut rng, &[2, 3, 2, 2, 2]);
        let logits = rand_tensor(&mut rng, &[2, 3]);
        let r = rand_tensor(&mut rng, feats.shape());
        let forward = |f: &Tensor<f64>, z: &Tensor<f64>| {
            let (gate, _) = sigmoid(z);
            dot(&scale_channels(f, &gate).unwrap().0, r.data())
        };
        let (gate, sc) = sigmoid(&logits);
        let (_, cc) = scale_channels(&feats, &gate).unwrap();
        let (df, dgate) = scale_channels_backward(cc, &r).unwrap();
        let dz = sigmoid_backward(sc, &dgate).unwrap();
        let nf = numeric_gradient(feats.data(), H, |d| forward(&with(&feats, d), &logits));
        let nz = numeric_gradient(logits.data(), H, |d| forward(&feats, &with(&logits, d)));
        let e = max_relative_error(df.data(), &nf).max(max_relative_error(dz.data(), &nz));
        assert!(e < TOL, "seed {seed}: {e}");
    }
}

#[test]
fn dropout_gradients_with_fixed_mask() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(700 + seed);
        let x = rand_tensor(&mut rng, &[3, 8]);
        let r = rand_tensor(&mut rng, &[3, 8]);
        let run = |x: &Tensor<f64>| {
            let mut mask_rng = ChaCha8Rng::seed_from_u64(seed);
            dropout(x, 0.4, Mode::Train, &mut mask_rng).unwrap()
        };
        let (_, cache) = run(&x);
        let g = dropout_backward(cache, &r).unwrap();
        let n = numeric_gradient(x.data(), H, |d| dot(&run(&with(&x, d)).0, r.data()));
        let e = max_relative_error(g.data(), &n);
        assert!(e < TOL, "seed {seed}: {e}");
    }
}

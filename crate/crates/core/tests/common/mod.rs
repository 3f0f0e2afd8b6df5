#![allow(dead_code)]

pub mod oracles;

use evhar::model::{backward, forward, ModelConfig, ModelParams};
use evhar::rng;
use evhar::{Mode, Tensor};
use evhar_tensor::gradcheck::max_relative_error;
use evhar_tensor::Scalar;
use rand::Rng;

/// Reduced configuration for the end-to-end gradient check.
pub fn gradcheck_config(attention: bool) -> ModelConfig {
    ModelConfig {
        clip_length: 4,
        input_resolution: (32, 32),
        attention_enabled: attention,
        ..ModelConfig::default()
    }
}

/// Outcome of an end-to-end gradient check.
#[derive(Debug, Clone, Copy)]
pub struct GradReport {
    /// Max relative error over every probed coordinate.
    pub max_relative: f64,
    /// Max relative error excluding conv biases, whose gradient is
    /// identically zero in train mode because batch norm follows them.
    pub max_relative_live: f64,
    /// Largest analytic magnitude among those structurally zero gradients.
    pub structural_zero_abs: f64,
    pub probes: usize,
    pub kinks: usize,
}

/// Compares analytic parameter gradients computed in `T` with central
/// differences computed in `f64`, for the scalar `sum(readout * logits)` on a
/// `(2, 1, T, H, W)` batch in train mode. `summed` uses an all-ones readout.
///
/// `per_tensor` coordinates are sampled without replacement from every
/// learnable tensor.
pub fn model_gradient_error<T: Scalar>(
    config: &ModelConfig,
    seed: u64,
    per_tensor: usize,
    summed: bool,
) -> GradReport {
    let mut rng = rng::stream(seed, &[77]);
    let mut reference = ModelParams::<f64>::build(config, seed).unwrap();
    for p in reference.params_mut() {
        if p.name.ends_with(".bias") || p.name.ends_with(".shift") {
            p.value.data_mut().iter_mut().for_each(|v| *v = rng.gen_range(-0.1..0.1));
        }
        if p.name.ends_with(".scale") {
            p.value.data_mut().iter_mut().for_each(|v| *v = rng.gen_range(0.5..1.5));
        }
    }
    let (h, w) = config.input_resolution;
    let shape = [2, config.input_channels, config.clip_length, h, w];
    let input = Tensor::<f64>::from_fn(&shape, |_| rng.gen_range(0.0..1.0));
    let k = config.num_classes;
    let readout = Tensor::<f64>::from_fn(&[2, k], |_| if summed { 1.0 } else { rng.gen_range(-1.0..1.0) });

    let mut analytic = reference.cast::<T>();
    let (_, cache) = forward(&mut analytic, config, &input.cast::<T>(), Mode::Train, seed).unwrap();
    backward(&mut analytic, cache, &readout.cast::<T>()).unwrap();

    let objective = |p: &mut ModelParams<f64>| -> (f64, u64) {
        let (logits, cache) = forward(p, config, &input, Mode::Train, seed).unwrap();
        let value = logits.data().iter().zip(readout.data()).map(|(a, b)| a * b).sum();
        (value, cache.branch_signature())
    };
    let (_, centre) = objective(&mut reference);

    // Coordinates whose +-h probes switch a ReLU or max-pool branch sit on a
    // kink where central differences are meaningless; they are redrawn.
    let h = 1e-5;
    let mut ana = Vec::new();
    let mut num = Vec::new();
    let mut live = (Vec::new(), Vec::new());
    let mut structural_zero_abs: f64 = 0.0;
    let mut kinks = 0;
    let n_tensors = reference.params().len();
    for i in 0..n_tensors {
        let len = reference.params()[i].value.len();
        let mut candidates: Vec<usize> = (0..len).collect();
        for k in 0..len.min(4 * per_tensor + 8) {
            let swap = rng.gen_range(k..len);
            candidates.swap(k, swap);
        }
        let mut taken = 0;
        for &j in candidates.iter().take(4 * per_tensor + 8) {
            if taken == per_tensor {
                break;
            }
            let orig = reference.params()[i].value.data()[j];
            reference.params_mut()[i].value.data_mut()[j] = orig + h;
            let (fp, sp) = objective(&mut reference);
            reference.params_mut()[i].value.data_mut()[j] = orig - h;
            let (fm, sm) = objective(&mut reference);
            reference.params_mut()[i].value.data_mut()[j] = orig;
            if sp != centre || sm != centre {
                kinks += 1;
                continue;
            }
            taken += 1;
            let n = (fp - fm) / (2.0 * h);
            let a = analytic.params()[i].grad.data()[j].to_f64_lossy();
            num.push(n);
            ana.push(a);
            if reference.params()[i].name.ends_with("conv.bias") {
                structural_zero_abs = structural_zero_abs.max(a.abs());
            } else {
                live.0.push(a);
                live.1.push(n);
            }
        }
        assert!(taken == per_tensor.min(len), "too many kinks near {}", reference.params()[i].name);
    }
    assert!(kinks <= ana.len() / 2, "{kinks} kink crossings for {} probes", ana.len());
    GradReport {
        max_relative: max_relative_error(&ana, &num),
        max_relative_live: max_relative_error(&live.0, &live.1),
        structural_zero_abs,
        probes: ana.len(),
        kinks,
    }
}

/// Learnable scalars of a network with the given block widths, evaluated
/// term by term.
pub fn closed_form_parameter_count(widths: &[usize], classes: usize, attention: bool) -> usize {
    let mut cin = 1;
    let mut total = 0;
    for &cout in widths {
        total += cin * cout * 27 + cout;
        total += 2 * cout;
        cin = cout;
    }
    if attention {
        let hidden = (cin / 8).max(1);
        total += hidden * cin + hidden + cin * hidden + cin;
    }
    total + cin * classes + classes
}

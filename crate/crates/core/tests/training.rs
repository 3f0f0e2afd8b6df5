mod common;

use std::collections::BTreeSet;

use evhar::datagen::{generate, SynthConfig};
use evhar::event_codec::io::{read_clip_dir, scan_dataset};
use evhar::model::{backward, forward, load_checkpoint, ModelConfig, ModelParams, ParamKind};
use evhar::training::{
    adamw_update, class_weights, focal_loss, load_dataset, metrics, train, AdamW, Dataset,
    FocalLossConfig, OptimizerConfig, Phase, SplitName, StoredClip, TrainConfig,
};
use evhar::{rng, Error, Mode, Tensor};
use evhar_tensor::gradcheck::{max_relative_error, numeric_gradient};
use rand::Rng;

use common::oracles;

fn random_logits(r: &mut impl Rng, b: usize, k: usize, scale: f64) -> Tensor<f64> {
    Tensor::from_fn(&[b, k], |_| r.gen_range(-scale..scale))
}

#[test]
fn focal_at_gamma_zero_is_cross_entropy() {
    let mut r = rng::stream(1, &[]);
    for _ in 0..100 {
        let b = r.gen_range(1..9);
        let z = random_logits(&mut r, b, 6, 8.0);
        let labels: Vec<usize> = (0..b).map(|_| r.gen_range(0..6)).collect();
        let (loss, _) = focal_loss(&z, &labels, &FocalLossConfig::unweighted(0.0, 6)).unwrap();
        assert!((loss - oracles::cross_entropy(z.data(), 6, &labels)).abs() < 1e-12);
    }
}

#[test]
fn focal_scalar_cases() {
    let cfg = FocalLossConfig::unweighted(2.0, 2);
    let (loss, _) = focal_loss(&Tensor::<f64>::zeros(&[1, 2]), &[0], &cfg).unwrap();
    assert!((loss - 0.25 * 2f64.ln()).abs() < 1e-12);
    let sure = Tensor::from_vec(&[1, 2], vec![1000.0, 0.0]).unwrap();
    let (loss, grad) = focal_loss(&sure, &[0], &cfg).unwrap();
    assert_eq!(loss, 0.0);
    assert!(grad.data().iter().all(|&g| g == 0.0));
}

#[test]
fn focal_gradient_matches_finite_differences() {
    for seed in 0..20 {
        let mut r = rng::stream(seed, &[2]);
        let z = random_logits(&mut r, 4, 6, 3.0);
        let labels: Vec<usize> = (0..4).map(|_| r.gen_range(0..6)).collect();
        let alpha: Vec<f64> = (0..6).map(|_| r.gen_range(0.2..3.0)).collect();
        for gamma in [0.0, 0.5, 1.0, 2.0, 5.0] {
            let cfg = FocalLossConfig::new(gamma, alpha.clone()).unwrap();
            let (_, grad) = focal_loss(&z, &labels, &cfg).unwrap();
            let num = numeric_gradient(z.data(), 1e-5, |v| {
                let t = Tensor::from_vec(&[4, 6], v.to_vec()).unwrap();
                focal_loss(&t, &labels, &cfg).unwrap().0
            });
            let err = max_relative_error(grad.data(), &num);
            assert!(err < 1e-6, "seed {seed} gamma {gamma}: {err}");
        }
    }
}

#[test]
fn focal_loss_non_increasing_in_gamma() {
    let mut r = rng::stream(3, &[]);
    for _ in 0..200 {
        let z = random_logits(&mut r, 1, 6, 4.0);
        let y = r.gen_range(0..6);
        let grid = [0.0, 0.25, 0.5, 1.0, 1.5, 2.0, 3.0, 5.0];
        let losses: Vec<f64> = grid
            .iter()
            .map(|&g| focal_loss(&z, &[y], &FocalLossConfig::unweighted(g, 6)).unwrap().0)
            .collect();
        assert!(losses.windows(2).all(|w| w[1] <= w[0]), "{losses:?}");
    }
}

#[test]
fn class_weight_identity() {
    let mut r = rng::stream(4, &[]);
    for _ in 0..100 {
        let counts: Vec<usize> = (0..r.gen_range(1..10)).map(|_| r.gen_range(1..5000)).collect();
        let w = class_weights(&counts).unwrap();
        let weighted: f64 = w.iter().zip(&counts).map(|(a, &n)| a * n as f64).sum();
        let total: usize = counts.iter().sum();
        assert!((weighted - total as f64).abs() < 1e-9 * total as f64);
    }
}

fn adamw(lr: f64, wd: f64) -> OptimizerConfig {
    OptimizerConfig {
        learning_rate: lr,
        weight_decay: wd,
        ..Default::default()
    }
}

#[test]
fn adamw_hand_examples() {
    let mut r = rng::stream(5, &[]);
    let mut theta: Vec<f64> = (0..16).map(|_| r.gen_range(-2.0..2.0)).collect();
    let start = theta.clone();
    let (mut m, mut v) = (vec![0.0; 16], vec![0.0; 16]);
    for t in 1..5 {
        adamw_update(&mut theta, &[0.0; 16], &mut m, &mut v, &adamw(0.0009, 0.0), t, true);
    }
    assert_eq!(theta, start);

    let mut theta = [1.0f64];
    adamw_update(&mut theta, &[1.0], &mut [0.0], &mut [0.0], &adamw(0.0009, 0.0), 1, true);
    assert!((theta[0] - (1.0 - 0.0009 / (1.0 + 1e-8))).abs() < 1e-12);

    let mut theta = [1.0f64];
    adamw_update(&mut theta, &[0.0], &mut [0.0], &mut [0.0], &adamw(0.0009, 1e-4), 1, true);
    assert!((theta[0] - (1.0 - 0.0009 * 1e-4)).abs() < 1e-12);

    let mut theta = [1.0f64];
    adamw_update(&mut theta, &[0.0], &mut [0.0], &mut [0.0], &adamw(0.0009, 1e-4), 1, false);
    assert_eq!(theta[0], 1.0);
}

#[test]
fn decay_contracts_weights() {
    let mut r = rng::stream(6, &[]);
    let mut theta: Vec<f64> = (0..32).map(|_| r.gen_range(-3.0..3.0)).collect();
    let (mut m, mut v) = (vec![0.0; 32], vec![0.0; 32]);
    for t in 1..20 {
        let before = theta.clone();
        adamw_update(&mut theta, &[0.0; 32], &mut m, &mut v, &adamw(0.01, 0.5), t, true);
        for (a, b) in theta.iter().zip(&before) {
            assert!(a.abs() < b.abs());
        }
    }
}

#[test]
fn decay_applies_to_weight_tensors_only() {
    let cfg = ModelConfig {
        channel_multiplier: 0.25,
        attention_enabled: true,
        ..Default::default()
    };
    let mut p = ModelParams::<f64>::build(&cfg, 0).unwrap();
    for param in p.params_mut() {
        param.value.fill(1.0);
    }
    let before = p.clone();
    let mut opt = AdamW::new(adamw(0.01, 0.1), &p).unwrap();
    opt.step(&mut p);
    let mut kinds = BTreeSet::new();
    for (a, b) in p.params().iter().zip(before.params()) {
        let changed = a.value != b.value;
        assert_eq!(changed, a.kind == ParamKind::Weight, "{}", a.name);
        let tagged_weight = a.name.ends_with("conv.weight")
            || a.name.ends_with("head.weight")
            || a.name.starts_with("attention.") && a.name.ends_with(".weight");
        assert_eq!(tagged_weight, a.kind == ParamKind::Weight, "{}", a.name);
        kinds.insert(format!("{:?}", a.kind));
    }
    assert_eq!(kinds.len(), 4);
}

#[test]
fn metrics_match_brute_force() {
    let mut r = rng::stream(7, &[]);
    for _ in 0..1000 {
        let k = r.gen_range(1..7);
        let n = r.gen_range(1..40);
        let labels: Vec<usize> = (0..n).map(|_| r.gen_range(0..k)).collect();
        let preds: Vec<usize> = (0..n)
            .map(|i| if r.gen_bool(0.6) { labels[i] } else { r.gen_range(0..k) })
            .collect();
        let m = metrics(&preds, &labels, k).unwrap();
        let (acc, f1) = oracles::metrics(&preds, &labels, k);
        assert!((m.accuracy - acc).abs() < 1e-12);
        assert!((m.weighted_f1 - f1).abs() < 1e-12);
        assert_eq!(m.total(), n);
        for c in 0..k {
            let support = labels.iter().filter(|&&l| l == c).count();
            assert_eq!(m.confusion[c].iter().sum::<usize>(), support);
        }
    }
    assert!(matches!(metrics(&[3], &[0], 3), Err(Error::Label { .. })));
}

fn tiny_model() -> ModelConfig {
    ModelConfig {
        clip_length: 4,
        input_resolution: (32, 32),
        ..Default::default()
    }
}

#[test]
fn one_small_step_reduces_batch_loss() {
    let cfg = tiny_model();
    for seed in 0..20 {
        let mut r = rng::stream(seed, &[9]);
        let mut p = ModelParams::<f64>::build(&cfg, seed).unwrap();
        let x = Tensor::from_fn(&[4, 1, 4, 32, 32], |_| r.gen_range(0.0..1.0));
        let labels: Vec<usize> = (0..4).map(|_| r.gen_range(0..6)).collect();
        let focal = FocalLossConfig::unweighted(2.0, 6);
        let mut opt = AdamW::new(adamw(1e-5, 1e-4), &p).unwrap();
        let (logits, cache) = forward(&mut p, &cfg, &x, Mode::Train, seed).unwrap();
        let (before, grad) = focal_loss(&logits, &labels, &focal).unwrap();
        backward(&mut p, cache, &grad).unwrap();
        opt.step(&mut p);
        let (logits, _) = forward(&mut p, &cfg, &x, Mode::Train, seed).unwrap();
        let (after, _) = focal_loss(&logits, &labels, &focal).unwrap();
        assert!(after < before, "seed {seed}: {before} -> {after}");
    }
}

/// Six classes of random 32x32 clips whose mean brightness depends on the
/// class.
fn toy_dataset(per_class: usize, names: &[&str]) -> Dataset {
    let mut r = rng::stream(10, &[]);
    let mut clips = Vec::new();
    for label in 0..names.len() {
        for _ in 0..per_class {
            let pixels = (0..4 * 32 * 32)
                .map(|_| if r.gen_bool(0.05 + 0.05 * label as f64) { 255 } else { 0 })
                .collect();
            clips.push(StoredClip { label, pixels });
        }
    }
    Dataset {
        classes: names.iter().map(|s| s.to_string()).collect(),
        frames: 4,
        height: 32,
        width: 32,
        clips,
    }
}

const NAMES: [&str; 6] = ["a", "b", "c", "d", "e", "f"];

fn quick_config(seed: u64) -> TrainConfig {
    TrainConfig {
        batch_size: 8,
        max_epochs: 2,
        patience: 5,
        seed,
        ..Default::default()
    }
}

#[test]
fn frozen_learning_rate_stops_after_two_epochs() {
    let data = toy_dataset(10, &NAMES);
    let mut cfg = quick_config(1);
    cfg.optimizer.learning_rate = 0.0;
    cfg.patience = 1;
    cfg.max_epochs = 50;
    let out = train(&data, &tiny_model(), &cfg, None).unwrap();
    assert_eq!(out.report.epochs.len(), 2);
    assert_eq!(out.report.best_epoch, 1);
    let e = &out.report.epochs;
    assert_eq!((e[0].val_loss, e[0].val_f1), (e[1].val_loss, e[1].val_f1));
}

#[test]
fn same_seed_same_trajectory() {
    let data = toy_dataset(10, &NAMES);
    let a = train(&data, &tiny_model(), &quick_config(2), None).unwrap();
    let b = train(&data, &tiny_model(), &quick_config(2), None).unwrap();
    assert_eq!(a.report.epochs, b.report.epochs);
    assert_eq!(a.best, b.best);
    let c = train(&data, &tiny_model(), &quick_config(3), None).unwrap();
    assert_ne!(a.report.epochs, c.report.epochs);
}

#[test]
fn worker_count_does_not_change_results() {
    let data = toy_dataset(10, &NAMES);
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| train(&data, &tiny_model(), &quick_config(4), None).unwrap())
    };
    let one = run(1);
    let three = run(3);
    assert_eq!(one.report.epochs, three.report.epochs);
    assert_eq!(one.best, three.best);
}

#[test]
fn test_split_is_read_only_after_training() {
    let data = toy_dataset(10, &NAMES);
    let out = train(&data, &tiny_model(), &quick_config(5), None).unwrap();
    let log = &out.report.access_log;
    let first_test = log.iter().position(|a| a.split == SplitName::Test).unwrap();
    assert_eq!(first_test, log.len() - 1);
    assert_eq!(log[first_test].phase, Phase::Final);
    assert!(log[..first_test].iter().all(|a| matches!(a.phase, Phase::Epoch(_))));
    let t = &out.split;
    assert!(t.test.iter().all(|i| !t.train.contains(i) && !t.val.contains(i)));
}

#[test]
fn outputs_are_written() {
    let data = toy_dataset(10, &NAMES);
    let dir = tempfile::tempdir().unwrap();
    let out = train(&data, &tiny_model(), &quick_config(6), Some(dir.path())).unwrap();
    let log = std::fs::read_to_string(dir.path().join("training_log.csv")).unwrap();
    let mut lines = log.lines();
    assert_eq!(lines.next(), Some("epoch,train_loss,val_loss,val_acc,val_f1"));
    assert_eq!(lines.count(), out.report.epochs.len());
    let confusion = std::fs::read_to_string(dir.path().join("confusion.csv")).unwrap();
    let total: usize = confusion
        .lines()
        .flat_map(|l| l.split(','))
        .map(|v| v.parse::<usize>().unwrap())
        .sum();
    assert_eq!(total, out.split.test.len());
    assert_eq!(confusion.lines().count(), 6);
    let ck = load_checkpoint::<f32>(&dir.path().join("best.ckpt")).unwrap();
    assert_eq!(ck.params, out.best);
    assert_eq!(ck.metadata["class.2"], "c");
    assert_eq!(ck.metadata["best_epoch"], out.report.best_epoch.to_string());
}

#[test]
fn default_augmentation_targets_named_classes() {
    let cfg = TrainConfig::default();
    let names: Vec<String> = ["Cooking", "Drinking", "Eating", "Getting up", "Sitting down", "Washing up"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    assert_eq!(cfg.resolve_augmentation(&names), BTreeSet::from([2, 5]));
    let synth: Vec<String> = evhar::datagen::CLASSES.iter().map(|s| s.to_string()).collect();
    assert!(cfg.resolve_augmentation(&synth).is_empty());
}

#[test]
fn loader_resamples_with_floor_rule() {
    let dir = tempfile::tempdir().unwrap();
    let synth = SynthConfig {
        samples_per_class: 1,
        ..Default::default()
    };
    generate(&synth, dir.path()).unwrap();
    let data = load_dataset(dir.path(), 5, (128, 128)).unwrap();
    let index = scan_dataset(dir.path()).unwrap();
    for (clip, (seq, label)) in data.clips.iter().zip(&index.sequences) {
        assert_eq!(clip.label, *label);
        let frames = read_clip_dir(seq).unwrap().frames;
        assert_eq!(frames.len(), 30);
        for (k, chunk) in clip.pixels.chunks(128 * 128).enumerate() {
            assert_eq!(chunk, frames[k * 30 / 5].pixels.as_slice());
        }
    }
    let small = load_dataset(dir.path(), 10, (64, 64)).unwrap();
    assert_eq!(small.clips[0].pixels.len(), 10 * 64 * 64);
}

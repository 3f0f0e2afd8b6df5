use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::augment::augment;
use super::data::{stratified_split, Dataset, Split, SplitFractions};
use super::loss::{class_weights, focal_loss, FocalLossConfig};
use super::metrics::{metrics, Metrics};
use super::optim::{AdamW, OptimizerConfig};
use crate::event_codec::ClipTensor;
use crate::model::{backward, forward, infer, save_checkpoint, Metadata, ModelConfig, ModelParams};
use crate::{rng, Error, Mode, Result};

/// Class names that receive heavy augmentation unless overridden.
pub const DEFAULT_AUGMENTED_CLASSES: [&str; 2] = ["Eating", "Washing up"];

const INIT_STREAM: u64 = 0x1417;
const SHUFFLE_STREAM: u64 = 0x5f1e;
const AUGMENT_STREAM: u64 = 0xa06;
const DROPOUT_STREAM: u64 = 0xd0;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without a strict validation-F1 improvement before stopping.
    pub patience: usize,
    pub fractions: SplitFractions,
    pub seed: u64,
    /// `None` selects the classes named in [`DEFAULT_AUGMENTED_CLASSES`].
    pub augmentation_classes: Option<BTreeSet<usize>>,
    pub focal_gamma: f64,
    pub optimizer: OptimizerConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            max_epochs: 1000,
            patience: 100,
            fractions: SplitFractions::default(),
            seed: 0,
            augmentation_classes: None,
            focal_gamma: 2.0,
            optimizer: OptimizerConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 {
            return Err(Error::Config(
                "batch size, max epochs and patience must be >= 1".into(),
            ));
        }
        self.fractions.validate()?;
        self.optimizer.validate()?;
        FocalLossConfig::unweighted(self.focal_gamma, 1).validate()
    }

    /// Indices of the augmented classes for a dataset with `classes`.
    pub fn resolve_augmentation(&self, classes: &[String]) -> BTreeSet<usize> {
        match &self.augmentation_classes {
            Some(set) => set.clone(),
            None => classes
                .iter()
                .enumerate()
                .filter(|(_, name)| {
                    DEFAULT_AUGMENTED_CLASSES
                        .iter()
                        .any(|d| normalize_name(d) == normalize_name(name))
                })
                .map(|(i, _)| i)
                .collect(),
        }
    }
}

fn normalize_name(s: &str) -> String {
    s.chars()
        .filter(|c| c.is_alphanumeric())
        .flat_map(char::to_lowercase)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SplitName {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Epoch(usize),
    /// After the epoch loop has ended.
    Final,
}

/// One read of a split's samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Access {
    pub split: SplitName,
    pub phase: Phase,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_acc: f64,
    pub val_f1: f64,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub classes: Vec<String>,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_f1: f64,
    /// Lowest validation loss over all epochs.
    pub best_val_loss: f64,
    pub test: Metrics,
    pub test_loss: f64,
    pub parameter_count: usize,
    pub minutes: f64,
    pub access_log: Vec<Access>,
}

pub struct TrainOutcome {
    pub report: TrainReport,
    pub best: ModelParams<f32>,
    pub split: Split,
}

/// Loss and metrics of one pass over a split in eval mode.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub loss: f64,
    pub predictions: Vec<usize>,
    pub metrics: Metrics,
}

fn argmax(row: &[f32]) -> usize {
    row.iter()
        .enumerate()
        .fold((0, f32::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
        .0
}

/// Eval-mode loss, predictions and metrics over `indices`.
pub fn evaluate(
    params: &ModelParams<f32>,
    model: &ModelConfig,
    dataset: &Dataset,
    indices: &[usize],
    focal: &FocalLossConfig,
    batch_size: usize,
) -> Result<Evaluation> {
    if indices.is_empty() {
        return Err(Error::EmptyEvaluation);
    }
    let mut loss_sum = 0.0;
    let mut predictions = Vec::with_capacity(indices.len());
    let labels: Vec<usize> = indices.iter().map(|&i| dataset.clips[i].label).collect();
    for (chunk, chunk_labels) in indices.chunks(batch_size).zip(labels.chunks(batch_size)) {
        let clips: Vec<ClipTensor> = chunk.iter().map(|&i| dataset.clip(i)).collect();
        let x = Dataset::batch::<f32>(&clips)?;
        let logits = infer(params, model, &x)?;
        let (loss, _) = focal_loss(&logits, chunk_labels, focal)?;
        loss_sum += loss * chunk.len() as f64;
        predictions.extend(logits.data().chunks(model.num_classes).map(argmax));
    }
    let metrics = metrics(&predictions, &labels, model.num_classes)?;
    Ok(Evaluation {
        loss: loss_sum / indices.len() as f64,
        predictions,
        metrics,
    })
}

/// Epoch-level training state over a fixed split.
pub struct Trainer<'a> {
    dataset: &'a Dataset,
    model: ModelConfig,
    config: TrainConfig,
    split: Split,
    focal: FocalLossConfig,
    augmented: BTreeSet<usize>,
    params: ModelParams<f32>,
    optimizer: AdamW<f32>,
    epoch: usize,
    access_log: Vec<Access>,
}

impl<'a> Trainer<'a> {
    /// Splits `dataset` with the configured fractions and seed.
    pub fn new(dataset: &'a Dataset, model: ModelConfig, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let split = stratified_split(
            &dataset.labels(),
            dataset.classes.len(),
            config.fractions,
            config.seed,
        )?;
        Self::with_split(dataset, model, config, split)
    }

    /// Uses a caller-provided split; validation and test may be empty.
    pub fn with_split(
        dataset: &'a Dataset,
        model: ModelConfig,
        config: TrainConfig,
        split: Split,
    ) -> Result<Self> {
        config.validate()?;
        model.validate()?;
        if model.num_classes != dataset.classes.len() {
            return Err(Error::Config(format!(
                "model has {} classes, dataset {}",
                model.num_classes,
                dataset.classes.len()
            )));
        }
        if (model.clip_length, model.input_resolution) != (dataset.frames, (dataset.height, dataset.width)) {
            return Err(Error::Config(format!(
                "model expects {}x{:?} clips, dataset holds {}x{:?}",
                model.clip_length,
                model.input_resolution,
                dataset.frames,
                (dataset.height, dataset.width)
            )));
        }
        if split.train.is_empty() {
            return Err(Error::Config("training split is empty".into()));
        }
        let alpha = class_weights(&dataset.class_counts(&split.train))?;
        let focal = FocalLossConfig::new(config.focal_gamma, alpha)?;
        let params = ModelParams::build(&model, rng::derive_seed(config.seed, &[INIT_STREAM]))?;
        let optimizer = AdamW::new(config.optimizer.clone(), &params)?;
        let augmented = config.resolve_augmentation(&dataset.classes);
        Ok(Trainer {
            dataset,
            model,
            config,
            split,
            focal,
            augmented,
            params,
            optimizer,
            epoch: 0,
            access_log: Vec::new(),
        })
    }

    pub fn params(&self) -> &ModelParams<f32> {
        &self.params
    }

    pub fn split(&self) -> &Split {
        &self.split
    }

    pub fn focal(&self) -> &FocalLossConfig {
        &self.focal
    }

    pub fn augmented_classes(&self) -> &BTreeSet<usize> {
        &self.augmented
    }

    /// Epochs completed so far.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn access_log(&self) -> &[Access] {
        &self.access_log
    }

    fn indices(&self, which: SplitName) -> &[usize] {
        match which {
            SplitName::Train => &self.split.train,
            SplitName::Val => &self.split.val,
            SplitName::Test => &self.split.test,
        }
    }

    /// One pass over the shuffled training split; returns the mean focal loss
    /// of the training batches.
    ///
    /// With a zero learning rate nothing is updated, including batch-norm
    /// running statistics.
    pub fn train_epoch(&mut self) -> Result<f64> {
        self.epoch += 1;
        let epoch = self.epoch as u64;
        self.access_log.push(Access {
            split: SplitName::Train,
            phase: Phase::Epoch(self.epoch),
        });
        let seed = self.config.seed;
        let frozen = self.config.optimizer.is_frozen();
        let saved_stats: Vec<_> = if frozen {
            self.params.blocks.iter().map(|b| b.stats.clone()).collect()
        } else {
            Vec::new()
        };

        let mut order = self.split.train.clone();
        order.shuffle(&mut rng::stream(seed, &[SHUFFLE_STREAM, epoch]));
        let mut loss_sum = 0.0;
        for (step, chunk) in order.chunks(self.config.batch_size).enumerate() {
            let dataset = self.dataset;
            let augmented = &self.augmented;
            let clips: Vec<ClipTensor> = chunk
                .par_iter()
                .map(|&i| {
                    let label = dataset.clips[i].label;
                    let clip = dataset.clip(i);
                    let mut r = rng::stream(seed, &[AUGMENT_STREAM, epoch, i as u64]);
                    augment(&clip, label, augmented, &mut r)
                })
                .collect();
            let labels: Vec<usize> = chunk.iter().map(|&i| dataset.clips[i].label).collect();
            let x = Dataset::batch::<f32>(&clips)?;
            drop(clips);
            let dropout_seed = rng::derive_seed(seed, &[DROPOUT_STREAM, epoch, step as u64]);
            let (logits, cache) = forward(&mut self.params, &self.model, &x, Mode::Train, dropout_seed)?;
            let (loss, grad) = focal_loss(&logits, &labels, &self.focal)?;
            loss_sum += loss * chunk.len() as f64;
            if frozen {
                continue;
            }
            self.params.zero_grad();
            backward(&mut self.params, cache, &grad)?;
            self.optimizer.step(&mut self.params);
        }
        if frozen {
            for (b, s) in self.params.blocks.iter_mut().zip(saved_stats) {
                b.stats = s;
            }
        }
        Ok(loss_sum / order.len() as f64)
    }

    /// Eval-mode pass over one split with the current parameters.
    pub fn evaluate(&mut self, which: SplitName, phase: Phase) -> Result<Evaluation> {
        self.access_log.push(Access { split: which, phase });
        evaluate(
            &self.params,
            &self.model,
            self.dataset,
            self.indices(which),
            &self.focal,
            self.config.batch_size,
        )
    }
}

fn checkpoint_metadata(
    dataset: &Dataset,
    config: &TrainConfig,
    record: &EpochRecord,
) -> Metadata {
    let mut m = Metadata::new();
    for (i, name) in dataset.classes.iter().enumerate() {
        m.insert(format!("class.{i}"), name.clone());
    }
    m.insert("best_epoch".into(), record.epoch.to_string());
    m.insert("val_f1".into(), record.val_f1.to_string());
    m.insert("val_acc".into(), record.val_acc.to_string());
    m.insert("val_loss".into(), record.val_loss.to_string());
    m.insert("seed".into(), config.seed.to_string());
    m.insert("batch_size".into(), config.batch_size.to_string());
    m.insert("focal_gamma".into(), config.focal_gamma.to_string());
    let f = config.fractions;
    m.insert("split".into(), format!("{},{},{}", f.train, f.val, f.test));
    m
}

pub fn write_training_log(path: &Path, epochs: &[EpochRecord]) -> Result<()> {
    let mut s = String::from("epoch,train_loss,val_loss,val_acc,val_f1\n");
    for e in epochs {
        writeln!(
            s,
            "{},{},{},{},{}",
            e.epoch, e.train_loss, e.val_loss, e.val_acc, e.val_f1
        )
        .expect("writing to a String");
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

pub fn write_confusion_csv(path: &Path, confusion: &[Vec<usize>]) -> Result<()> {
    let mut s = String::new();
    for row in confusion {
        let cells: Vec<String> = row.iter().map(usize::to_string).collect();
        s.push_str(&cells.join(","));
        s.push('\n');
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

/// File names written by [`train`] inside its output directory.
pub fn output_paths(out: &Path) -> (PathBuf, PathBuf, PathBuf) {
    (
        out.join("best.ckpt"),
        out.join("training_log.csv"),
        out.join("confusion.csv"),
    )
}

/// Full training run: epochs with validation-F1 early stopping, then one
/// evaluation of the best parameters on the test split.
///
/// With `out` set, the best checkpoint is rewritten on every strict
/// improvement and `training_log.csv` / `confusion.csv` are written at the
/// end.
pub fn train(
    dataset: &Dataset,
    model: &ModelConfig,
    config: &TrainConfig,
    out: Option<&Path>,
) -> Result<TrainOutcome> {
    let start = Instant::now();
    let mut trainer = Trainer::new(dataset, model.clone(), config.clone())?;
    if let Some(dir) = out {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut epochs = Vec::new();
    let mut best: Option<(EpochRecord, ModelParams<f32>)> = None;
    let mut stale = 0;
    for _ in 0..config.max_epochs {
        let train_loss = trainer.train_epoch()?;
        let epoch = trainer.epoch();
        let val = trainer.evaluate(SplitName::Val, Phase::Epoch(epoch))?;
        let record = EpochRecord {
            epoch,
            train_loss,
            val_loss: val.loss,
            val_acc: val.metrics.accuracy,
            val_f1: val.metrics.weighted_f1,
        };
        log::info!(
            "epoch {epoch}: train_loss {train_loss:.5} val_loss {:.5} val_acc {:.4} val_f1 {:.4}",
            record.val_loss,
            record.val_acc,
            record.val_f1
        );
        let improved = best.as_ref().is_none_or(|(b, _)| record.val_f1 > b.val_f1);
        if improved {
            stale = 0;
            if let Some(dir) = out {
                let meta = checkpoint_metadata(dataset, config, &record);
                save_checkpoint(&output_paths(dir).0, trainer.params(), model, &meta)?;
            }
            let mut snapshot = trainer.params().clone();
            snapshot.zero_grad();
            best = Some((record.clone(), snapshot));
        } else {
            stale += 1;
        }
        epochs.push(record);
        if stale >= config.patience {
            log::info!("no validation F1 improvement for {stale} epochs; stopping");
            break;
        }
    }
    let (best_record, best_params) = best.expect("at least one epoch ran");
    trainer.access_log.push(Access {
        split: SplitName::Test,
        phase: Phase::Final,
    });
    let test = evaluate(
        &best_params,
        model,
        dataset,
        &trainer.split.test,
        &trainer.focal,
        config.batch_size,
    )?;
    if let Some(dir) = out {
        let (_, log_path, confusion_path) = output_paths(dir);
        write_training_log(&log_path, &epochs)?;
        write_confusion_csv(&confusion_path, &test.metrics.confusion)?;
    }
    let best_val_loss = epochs.iter().map(|e| e.val_loss).fold(f64::INFINITY, f64::min);
    let report = TrainReport {
        classes: dataset.classes.clone(),
        best_epoch: best_record.epoch,
        best_val_f1: best_record.val_f1,
        best_val_loss,
        epochs,
        test_loss: test.loss,
        test: test.metrics,
        parameter_count: best_params.parameter_count(),
        minutes: start.elapsed().as_secs_f64() / 60.0,
        access_log: trainer.access_log,
    };
    Ok(TrainOutcome {
        report,
        best: best_params,
        split: trainer.split,
    })
}

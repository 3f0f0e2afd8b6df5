//! Focal loss, AdamW, augmentation, metrics, dataset loading and the
//! training loop.

mod augment;
mod data;
mod loss;
mod metrics;
mod optim;
mod trainer;

pub use augment::{augment, AUGMENT_PROBABILITY, MAX_ROTATION_DEG, MAX_TRANSLATION};
pub use data::{load_dataset, load_sequence, stratified_split, Dataset, Split, SplitFractions, StoredClip};
pub use loss::{class_weights, focal_loss, FocalLossConfig, PROB_FLOOR};
pub use metrics::{metrics, Metrics};
pub use optim::{adamw_update, AdamW, OptimizerConfig};
pub use trainer::{
    evaluate, output_paths, train, write_confusion_csv, write_training_log, Access, EpochRecord,
    Evaluation, Phase, SplitName, TrainConfig, TrainOutcome, TrainReport, Trainer,
    DEFAULT_AUGMENTED_CLASSES,
};

//! Event-camera human action recognition.
//!
//! The pipeline runs intensity video through a DVS emulator, accumulates the
//! resulting events into fixed-rate event frames, samples a fixed-length clip
//! and classifies it with a five-block 3D CNN trained with focal loss and
//! AdamW.
//!
//! - [`event_codec`]: event types, DVS emulation, frame accumulation, clip
//!   encoding and the on-disk formats (EVS1 event files, PGM clip directories).
//! - [`model`]: network configuration, parameters, forward/backward passes
//!   and checkpoints.
//! - [`training`]: focal loss, AdamW, augmentation, metrics and the training
//!   loop with early stopping.
//! - [`datagen`]: a seeded synthetic moving-blob dataset with six classes.

pub mod datagen;
pub mod error;
pub mod event_codec;
pub mod model;
pub mod rng;
pub mod training;

pub use error::{Error, Result};
pub use evhar_tensor::{Mode, Tensor};

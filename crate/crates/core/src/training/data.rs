use std::path::Path;

use evhar_tensor::{Scalar, Tensor};
use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::event_codec::io::{quantize, read_clip_dir, scan_dataset};
use crate::event_codec::{resize_pad, uniform_downsample, ClipTensor, EventFrame};
use crate::{rng, Error, Result};

const SPLIT_STREAM: u64 = 0x5911;

/// One clip held as 8-bit pixels, `T * H * W` values.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredClip {
    pub label: usize,
    pub pixels: Vec<u8>,
}

/// A labelled clip collection at a fixed `(T, H, W)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub classes: Vec<String>,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub clips: Vec<StoredClip>,
}

impl Dataset {
    pub fn labels(&self) -> Vec<usize> {
        self.clips.iter().map(|c| c.label).collect()
    }

    pub fn clip(&self, i: usize) -> ClipTensor {
        ClipTensor {
            frames: self.frames,
            height: self.height,
            width: self.width,
            values: self.clips[i].pixels.iter().map(|&p| p as f32 / 255.0).collect(),
        }
    }

    /// Stacks clips into a `(B, 1, T, H, W)` tensor.
    pub fn batch<T: Scalar>(clips: &[ClipTensor]) -> Result<Tensor<T>> {
        let first = clips
            .first()
            .ok_or_else(|| Error::InsufficientInput("empty batch".into()))?;
        let [_, t, h, w] = first.shape();
        let mut data = Vec::with_capacity(clips.len() * t * h * w);
        for c in clips {
            if c.shape() != first.shape() {
                return Err(Error::Format("clips in a batch differ in shape".into()));
            }
            data.extend(c.values.iter().map(|&v| T::from_f64_lossy(v as f64)));
        }
        Ok(Tensor::from_vec(&[clips.len(), 1, t, h, w], data)?)
    }

    pub fn class_counts(&self, indices: &[usize]) -> Vec<usize> {
        let mut counts = vec![0; self.classes.len()];
        for &i in indices {
            counts[self.clips[i].label] += 1;
        }
        counts
    }
}

/// Reads one clip directory as quantized pixels `(frames, H, W)`, applying
/// the same re-sampling and resizing as [`load_dataset`].
pub fn load_sequence(dir: &Path, frames: usize, resolution: (usize, usize)) -> Result<Vec<u8>> {
    let clip = read_clip_dir(dir)?;
    let picked = uniform_downsample(&clip.frames, frames)?;
    let mut pixels = Vec::with_capacity(frames * resolution.0 * resolution.1);
    for pgm in picked {
        if (pgm.height, pgm.width) == resolution {
            pixels.extend_from_slice(&pgm.pixels);
        } else {
            let resized = resize_pad(&EventFrame::from(&pgm), resolution)?;
            pixels.extend(resized.values.iter().map(|&v| quantize(v)));
        }
    }
    Ok(pixels)
}

/// Loads a dataset tree, re-sampling every sequence to `frames` frames with
/// the floor-index rule and resizing/padding to `resolution` when needed.
pub fn load_dataset(root: &Path, frames: usize, resolution: (usize, usize)) -> Result<Dataset> {
    let index = scan_dataset(root)?;
    if index.sequences.is_empty() {
        return Err(Error::InsufficientInput(format!(
            "{} holds no sequences",
            root.display()
        )));
    }
    let clips = index
        .sequences
        .par_iter()
        .map(|(dir, label)| {
            Ok(StoredClip {
                label: *label,
                pixels: load_sequence(dir, frames, resolution)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        classes: index.classes,
        frames,
        height: resolution.0,
        width: resolution.1,
        clips,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        SplitFractions {
            train: 0.7,
            val: 0.15,
            test: 0.15,
        }
    }
}

impl SplitFractions {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|&f| !(f > 0.0)) || (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "split fractions {parts:?} must be positive and sum to 1"
            )));
        }
        Ok(())
    }
}

/// Sample indices of each split, each list in ascending order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Per-class seeded shuffle, then `round(n * train)` to train,
/// `round(n * val)` to validation and the rest to test.
///
/// Every class must land at least one sample in every split.
pub fn stratified_split(
    labels: &[usize],
    classes: usize,
    fractions: SplitFractions,
    seed: u64,
) -> Result<Split> {
    fractions.validate()?;
    let mut split = Split {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for c in 0..classes {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        let n = members.len();
        members.shuffle(&mut rng::stream(seed, &[SPLIT_STREAM, c as u64]));
        let n_train = ((n as f64 * fractions.train).round() as usize).min(n);
        let n_val = ((n as f64 * fractions.val).round() as usize).min(n - n_train);
        if n_train == 0 || n_val == 0 || n_train + n_val == n {
            return Err(Error::Config(format!(
                "class {c} with {n} samples leaves an empty split"
            )));
        }
        split.train.extend(&members[..n_train]);
        split.val.extend(&members[n_train..n_train + n_val]);
        split.test.extend(&members[n_train + n_val..]);
    }
    for part in [&mut split.train, &mut split.val, &mut split.test] {
        part.sort_unstable();
    }
    Ok(split)
}

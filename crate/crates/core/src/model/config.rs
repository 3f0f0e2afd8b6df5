use crate::{Error, Result};

/// Number of conv blocks; the input resolution must be divisible by `2^BLOCKS`.
pub const BLOCKS: usize = 5;
/// Bottleneck reduction of the channel-attention module.
pub const ATTENTION_REDUCTION: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// Base widths of the five conv blocks, before `channel_multiplier`.
    pub channels: Vec<usize>,
    pub input_channels: usize,
    pub num_classes: usize,
    pub clip_length: usize,
    /// `(height, width)`.
    pub input_resolution: (usize, usize),
    pub dropout_rate: f64,
    pub attention_enabled: bool,
    pub channel_multiplier: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            channels: vec![16, 32, 64, 128, 256],
            input_channels: 1,
            num_classes: 6,
            clip_length: 10,
            input_resolution: (128, 128),
            dropout_rate: 0.5,
            attention_enabled: false,
            channel_multiplier: 1.0,
        }
    }
}

impl ModelConfig {
    /// Block widths after the multiplier, each rounded and at least 1.
    pub fn widths(&self) -> Vec<usize> {
        self.channels
            .iter()
            .map(|&c| ((c as f64 * self.channel_multiplier).round() as usize).max(1))
            .collect()
    }

    pub fn feature_channels(&self) -> usize {
        *self.widths().last().expect("validated config has blocks")
    }

    pub fn attention_hidden(&self) -> usize {
        (self.feature_channels() / ATTENTION_REDUCTION).max(1)
    }

    /// Shape of the feature map entering global pooling for a batch of `b`.
    pub fn feature_shape(&self, b: usize) -> [usize; 5] {
        let (h, w) = self.input_resolution;
        [
            b,
            self.feature_channels(),
            self.clip_length,
            h >> BLOCKS,
            w >> BLOCKS,
        ]
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.len() != BLOCKS {
            return Err(Error::Config(format!(
                "expected {BLOCKS} block widths, got {}",
                self.channels.len()
            )));
        }
        if self.channels.contains(&0) {
            return Err(Error::Config("block widths must be >= 1".into()));
        }
        if !(self.channel_multiplier > 0.0 && self.channel_multiplier.is_finite()) {
            return Err(Error::Config("channel multiplier must be positive".into()));
        }
        if self.input_channels == 0 || self.num_classes == 0 || self.clip_length == 0 {
            return Err(Error::Config(
                "input channels, classes and clip length must be >= 1".into(),
            ));
        }
        let (h, w) = self.input_resolution;
        let step = 1 << BLOCKS;
        if h == 0 || w == 0 || h % step != 0 || w % step != 0 {
            return Err(Error::Config(format!(
                "input resolution {h}x{w} must be a positive multiple of {step}"
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!(
                "dropout rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        Ok(())
    }
}

use evhar_tensor::{RunningStats, Scalar, Tensor};
use rand::Rng;

use super::config::ModelConfig;
use crate::{rng, Error, Result};

/// Role of a learnable tensor; decides e.g. whether weight decay applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamKind {
    /// Conv or linear weights.
    Weight,
    Bias,
    NormScale,
    NormShift,
}

impl ParamKind {
    pub fn decays(self) -> bool {
        self == ParamKind::Weight
    }
}

/// A learnable tensor with its gradient slot.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub kind: ParamKind,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
}

impl<T: Scalar> Param<T> {
    fn new(name: String, kind: ParamKind, value: Tensor<T>) -> Self {
        let grad = Tensor::zeros(value.shape());
        Param {
            name,
            kind,
            value,
            grad,
        }
    }

    fn cast<U: Scalar>(&self) -> Param<U> {
        Param {
            name: self.name.clone(),
            kind: self.kind,
            value: self.value.cast(),
            grad: self.grad.cast(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvBlock<T> {
    pub conv_weight: Param<T>,
    pub conv_bias: Param<T>,
    pub norm_scale: Param<T>,
    pub norm_shift: Param<T>,
    pub stats: RunningStats<T>,
}

/// Squeeze-excitation weights: `C -> C/8 -> C`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams<T> {
    pub squeeze_weight: Param<T>,
    pub squeeze_bias: Param<T>,
    pub excite_weight: Param<T>,
    pub excite_bias: Param<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    pub blocks: Vec<ConvBlock<T>>,
    pub attention: Option<AttentionParams<T>>,
    pub head_weight: Param<T>,
    pub head_bias: Param<T>,
}

/// Kaiming-uniform (ReLU gain) for a tensor with the given fan-in.
fn kaiming<T: Scalar>(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Tensor<T> {
    let bound = (6.0 / fan_in as f64).sqrt();
    Tensor::from_fn(shape, |_| T::from_f64_lossy(rng.gen_range(-bound..bound)))
}

impl<T: Scalar> ModelParams<T> {
    /// Seeded initialization: Kaiming-uniform weights, zero biases,
    /// unit norm scales, zero norm shifts.
    pub fn build(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng::stream(seed, &[0x1417]);
        let mut cin = config.input_channels;
        let mut blocks = Vec::new();
        for (i, &cout) in config.widths().iter().enumerate() {
            let fan_in = cin * 27;
            blocks.push(ConvBlock {
                conv_weight: Param::new(
                    format!("block{i}.conv.weight"),
                    ParamKind::Weight,
                    kaiming(&[cout, cin, 3, 3, 3], fan_in, &mut rng),
                ),
                conv_bias: Param::new(format!("block{i}.conv.bias"), ParamKind::Bias, Tensor::zeros(&[cout])),
                norm_scale: Param::new(
                    format!("block{i}.norm.scale"),
                    ParamKind::NormScale,
                    Tensor::filled(&[cout], T::one()),
                ),
                norm_shift: Param::new(
                    format!("block{i}.norm.shift"),
                    ParamKind::NormShift,
                    Tensor::zeros(&[cout]),
                ),
                stats: RunningStats::new(cout),
            });
            cin = cout;
        }
        let attention = config.attention_enabled.then(|| {
            let hidden = config.attention_hidden();
            AttentionParams {
                squeeze_weight: Param::new(
                    "attention.squeeze.weight".into(),
                    ParamKind::Weight,
                    kaiming(&[hidden, cin], cin, &mut rng),
                ),
                squeeze_bias: Param::new("attention.squeeze.bias".into(), ParamKind::Bias, Tensor::zeros(&[hidden])),
                excite_weight: Param::new(
                    "attention.excite.weight".into(),
                    ParamKind::Weight,
                    kaiming(&[cin, hidden], hidden, &mut rng),
                ),
                excite_bias: Param::new("attention.excite.bias".into(), ParamKind::Bias, Tensor::zeros(&[cin])),
            }
        });
        let k = config.num_classes;
        Ok(ModelParams {
            blocks,
            attention,
            head_weight: Param::new("head.weight".into(), ParamKind::Weight, kaiming(&[k, cin], cin, &mut rng)),
            head_bias: Param::new("head.bias".into(), ParamKind::Bias, Tensor::zeros(&[k])),
        })
    }

    /// Learnable tensors in declaration order.
    pub fn params(&self) -> Vec<&Param<T>> {
        let mut out = Vec::new();
        for b in &self.blocks {
            out.extend([&b.conv_weight, &b.conv_bias, &b.norm_scale, &b.norm_shift]);
        }
        if let Some(a) = &self.attention {
            out.extend([&a.squeeze_weight, &a.squeeze_bias, &a.excite_weight, &a.excite_bias]);
        }
        out.extend([&self.head_weight, &self.head_bias]);
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut out = Vec::new();
        for b in &mut self.blocks {
            out.extend([
                &mut b.conv_weight,
                &mut b.conv_bias,
                &mut b.norm_scale,
                &mut b.norm_shift,
            ]);
        }
        if let Some(a) = &mut self.attention {
            out.extend([
                &mut a.squeeze_weight,
                &mut a.squeeze_bias,
                &mut a.excite_weight,
                &mut a.excite_bias,
            ]);
        }
        out.extend([&mut self.head_weight, &mut self.head_bias]);
        out
    }

    /// Every tensor a checkpoint stores, in file order.
    pub(crate) fn stored_tensors(&self) -> Vec<&Tensor<T>> {
        let mut out = Vec::new();
        for b in &self.blocks {
            out.extend([
                &b.conv_weight.value,
                &b.conv_bias.value,
                &b.norm_scale.value,
                &b.norm_shift.value,
                &b.stats.mean,
                &b.stats.var,
            ]);
        }
        if let Some(a) = &self.attention {
            out.extend([
                &a.squeeze_weight.value,
                &a.squeeze_bias.value,
                &a.excite_weight.value,
                &a.excite_bias.value,
            ]);
        }
        out.extend([&self.head_weight.value, &self.head_bias.value]);
        out
    }

    /// Every tensor a checkpoint stores, in file order: learnable tensors
    /// interleaved with each block's running statistics.
    pub(crate) fn stored_tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = Vec::new();
        for b in &mut self.blocks {
            out.extend([
                &mut b.conv_weight.value,
                &mut b.conv_bias.value,
                &mut b.norm_scale.value,
                &mut b.norm_shift.value,
                &mut b.stats.mean,
                &mut b.stats.var,
            ]);
        }
        if let Some(a) = &mut self.attention {
            out.extend([
                &mut a.squeeze_weight.value,
                &mut a.squeeze_bias.value,
                &mut a.excite_weight.value,
                &mut a.excite_bias.value,
            ]);
        }
        out.extend([&mut self.head_weight.value, &mut self.head_bias.value]);
        out
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.grad.fill(T::zero());
        }
    }

    /// Number of learnable scalars (running statistics excluded).
    pub fn parameter_count(&self) -> usize {
        self.params().iter().map(|p| p.value.len()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        ModelParams {
            blocks: self
                .blocks
                .iter()
                .map(|b| ConvBlock {
                    conv_weight: b.conv_weight.cast(),
                    conv_bias: b.conv_bias.cast(),
                    norm_scale: b.norm_scale.cast(),
                    norm_shift: b.norm_shift.cast(),
                    stats: RunningStats {
                        mean: b.stats.mean.cast(),
                        var: b.stats.var.cast(),
                    },
                })
                .collect(),
            attention: self.attention.as_ref().map(|a| AttentionParams {
                squeeze_weight: a.squeeze_weight.cast(),
                squeeze_bias: a.squeeze_bias.cast(),
                excite_weight: a.excite_weight.cast(),
                excite_bias: a.excite_bias.cast(),
            }),
            head_weight: self.head_weight.cast(),
            head_bias: self.head_bias.cast(),
        }
    }

    /// Fails unless every tensor has the shape `config` implies.
    pub fn check_compatible(&self, config: &ModelConfig) -> Result<()> {
        let expected = ModelParams::<T>::build(config, 0)?;
        let a: Vec<_> = self.params().iter().map(|p| (p.name.clone(), p.value.shape().to_vec())).collect();
        let b: Vec<_> = expected
            .params()
            .iter()
            .map(|p| (p.name.clone(), p.value.shape().to_vec()))
            .collect();
        if a != b {
            return Err(Error::IncompatibleCheckpoint(
                "parameter shapes do not match the model configuration".into(),
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_params() {
        let cfg = ModelConfig::default();
        let a = ModelParams::<f32>::build(&cfg, 11).unwrap();
        let b = ModelParams::<f32>::build(&cfg, 11).unwrap();
        let c = ModelParams::<f32>::build(&cfg, 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn only_weights_decay() {
        let cfg = ModelConfig {
            attention_enabled: true,
            ..Default::default()
        };
        let p = ModelParams::<f32>::build(&cfg, 0).unwrap();
        for param in p.params() {
            let is_weight = param.name.ends_with(".weight");
            assert_eq!(param.kind.decays(), is_weight, "{}", param.name);
        }
    }

    #[test]
    fn kaiming_bound_respected() {
        let p = ModelParams::<f64>::build(&ModelConfig::default(), 3).unwrap();
        let bound = (6.0f64 / 27.0).sqrt();
        assert!(p.blocks[0].conv_weight.value.data().iter().all(|v| v.abs() < bound));
        assert!(p.blocks[0].conv_bias.value.data().iter().all(|&v| v == 0.0));
    }
}

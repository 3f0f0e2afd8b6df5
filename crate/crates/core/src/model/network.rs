use std::hash::{DefaultHasher, Hash, Hasher};

use evhar_tensor::{
    batchnorm3d, batchnorm3d_backward, conv3d, conv3d_backward, conv3d_backward_params, dropout,
    dropout_backward, global_avg_pool, global_avg_pool_backward, linear, linear_backward,
    maxpool3d, maxpool3d_backward, relu, relu_backward, scale_channels, scale_channels_backward,
    sigmoid, sigmoid_backward, AvgPoolCache, BatchNormCache, ChannelScaleCache, Conv3dCache,
    DropoutCache, LinearCache, MaxPoolCache, Mode, ReluCache, RunningStats, Scalar, SigmoidCache,
    Tensor,
};

use super::config::ModelConfig;
use super::params::{AttentionParams, ConvBlock, ModelParams, Param};
use crate::{rng, Error, Result};

pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPSILON: f64 = 1e-5;

struct BlockCache<T> {
    conv: Conv3dCache<T>,
    norm: BatchNormCache<T>,
    relu: ReluCache,
    pool: MaxPoolCache,
}

pub struct AttentionCache<T> {
    pool: AvgPoolCache,
    squeeze: LinearCache<T>,
    relu: ReluCache,
    excite: LinearCache<T>,
    gate: SigmoidCache<T>,
    scale: ChannelScaleCache<T>,
}

/// Saved activations from one [`forward`] call.
pub struct ForwardCache<T> {
    blocks: Vec<BlockCache<T>>,
    attention: Option<AttentionCache<T>>,
    pool: AvgPoolCache,
    dropout: DropoutCache<T>,
    head: LinearCache<T>,
    /// Shape of the feature map entering global average pooling.
    pub feature_shape: [usize; 5],
}

impl<T> ForwardCache<T> {
    /// Hash of every ReLU mask and max-pool argmax. Two forward passes with
    /// equal signatures took the same branch through every piecewise-linear
    /// layer.
    pub fn branch_signature(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for b in &self.blocks {
            b.relu.active().hash(&mut h);
            b.pool.argmax().hash(&mut h);
        }
        if let Some(a) = &self.attention {
            a.relu.active().hash(&mut h);
        }
        h.finish()
    }
}

fn check_input<T: Scalar>(config: &ModelConfig, input: &Tensor<T>) -> Result<()> {
    let [_, c, t, h, w] = input.dims5("model forward")?;
    let (eh, ew) = config.input_resolution;
    if (c, t, h, w) != (config.input_channels, config.clip_length, eh, ew) {
        return Err(Error::Tensor(evhar_tensor::TensorError::Shape {
            op: "model forward",
            detail: format!(
                "input {:?} does not match (B, {}, {}, {}, {})",
                input.shape(),
                config.input_channels,
                config.clip_length,
                eh,
                ew
            ),
        }));
    }
    Ok(())
}

/// `conv3d -> batchnorm3d -> relu -> maxpool3d`. Running statistics are passed
/// separately so eval callers can work on a copy.
fn block_forward<T: Scalar>(
    block: &ConvBlock<T>,
    stats: &mut RunningStats<T>,
    x: &Tensor<T>,
    mode: Mode,
) -> Result<(Tensor<T>, BlockCache<T>)> {
    let (y, conv) = conv3d(x, &block.conv_weight.value, &block.conv_bias.value)?;
    let (y, norm) = batchnorm3d(
        &y,
        &block.norm_scale.value,
        &block.norm_shift.value,
        stats,
        mode,
        T::from_f64_lossy(BN_MOMENTUM),
        T::from_f64_lossy(BN_EPSILON),
    )?;
    let (y, relu) = relu(&y);
    let (y, pool) = maxpool3d(&y)?;
    Ok((y, BlockCache { conv, norm, relu, pool }))
}

/// Squeeze-excitation channel attention: pool, bottleneck MLP, sigmoid gate,
/// channelwise rescale.
pub fn self_attention<T: Scalar>(
    att: &AttentionParams<T>,
    x: &Tensor<T>,
) -> Result<(Tensor<T>, AttentionCache<T>)> {
    let (s, pool) = global_avg_pool(x)?;
    let (z, squeeze) = linear(&s, &att.squeeze_weight.value, &att.squeeze_bias.value)?;
    let (z, relu) = relu(&z);
    let (z, excite) = linear(&z, &att.excite_weight.value, &att.excite_bias.value)?;
    let (g, gate) = sigmoid(&z);
    let (y, scale) = scale_channels(x, &g)?;
    Ok((
        y,
        AttentionCache {
            pool,
            squeeze,
            relu,
            excite,
            gate,
            scale,
        },
    ))
}

/// Gradient of [`self_attention`] with respect to its input; parameter
/// gradients are added into `att`.
pub fn self_attention_backward<T: Scalar>(
    att: &mut AttentionParams<T>,
    cache: AttentionCache<T>,
    grad: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (mut dx, dgate) = scale_channels_backward(cache.scale, grad)?;
    let dz = sigmoid_backward(cache.gate, &dgate)?;
    let g = linear_backward(cache.excite, &dz)?;
    accumulate(&mut att.excite_weight, &g.weights)?;
    accumulate(&mut att.excite_bias, &g.bias)?;
    let dz = relu_backward(cache.relu, &g.input)?;
    let g = linear_backward(cache.squeeze, &dz)?;
    accumulate(&mut att.squeeze_weight, &g.weights)?;
    accumulate(&mut att.squeeze_bias, &g.bias)?;
    let dpool = global_avg_pool_backward(cache.pool, &g.input)?;
    dx.add_assign(&dpool)?;
    Ok(dx)
}

fn accumulate<T: Scalar>(param: &mut Param<T>, grad: &Tensor<T>) -> Result<()> {
    param.grad.add_assign(grad)?;
    Ok(())
}

/// Runs the network on a `(B, C, T, H, W)` batch and returns `(B, K)` logits.
///
/// Train mode uses batch statistics (updating the running statistics in
/// `params`) and draws the dropout mask from a stream derived from `seed`.
pub fn forward<T: Scalar>(
    params: &mut ModelParams<T>,
    config: &ModelConfig,
    input: &Tensor<T>,
    mode: Mode,
    seed: u64,
) -> Result<(Tensor<T>, ForwardCache<T>)> {
    check_input(config, input)?;
    let mut blocks = Vec::with_capacity(params.blocks.len());
    let mut x = None;
    for block in params.blocks.iter_mut() {
        let mut stats = block.stats.clone();
        let (y, cache) = block_forward(block, &mut stats, x.as_ref().unwrap_or(input), mode)?;
        block.stats = stats;
        blocks.push(cache);
        x = Some(y);
    }
    let mut x = x.expect("at least one block");
    let attention = match &params.attention {
        Some(att) => {
            let (y, cache) = self_attention(att, &x)?;
            x = y;
            Some(cache)
        }
        None => None,
    };
    let feature_shape = x.dims5("model forward")?;
    let (pooled, pool) = global_avg_pool(&x)?;
    drop(x);
    let mut drng = rng::stream(seed, &[0xd0]);
    let (pooled, dropout) = dropout(&pooled, config.dropout_rate, mode, &mut drng)?;
    let (logits, head) = linear(&pooled, &params.head_weight.value, &params.head_bias.value)?;
    Ok((
        logits,
        ForwardCache {
            blocks,
            attention,
            pool,
            dropout,
            head,
            feature_shape,
        },
    ))
}

/// Back-propagates `grad_logits` and adds the parameter gradients into each
/// parameter's `grad` slot.
pub fn backward<T: Scalar>(
    params: &mut ModelParams<T>,
    cache: ForwardCache<T>,
    grad_logits: &Tensor<T>,
) -> Result<()> {
    let g = linear_backward(cache.head, grad_logits)?;
    accumulate(&mut params.head_weight, &g.weights)?;
    accumulate(&mut params.head_bias, &g.bias)?;
    let d = dropout_backward(cache.dropout, &g.input)?;
    let mut d = global_avg_pool_backward(cache.pool, &d)?;
    if let (Some(att), Some(ac)) = (params.attention.as_mut(), cache.attention) {
        d = self_attention_backward(att, ac, &d)?;
    }
    for (i, (block, bc)) in params
        .blocks
        .iter_mut()
        .zip(cache.blocks)
        .enumerate()
        .rev()
    {
        let dy = maxpool3d_backward(bc.pool, &d)?;
        let dy = relu_backward(bc.relu, &dy)?;
        let ng = batchnorm3d_backward(bc.norm, &dy)?;
        accumulate(&mut block.norm_scale, &ng.gamma)?;
        accumulate(&mut block.norm_shift, &ng.beta)?;
        let cg = if i == 0 {
            conv3d_backward_params(bc.conv, &ng.input)?
        } else {
            conv3d_backward(bc.conv, &ng.input)?
        };
        accumulate(&mut block.conv_weight, &cg.weights)?;
        accumulate(&mut block.conv_bias, &cg.bias)?;
        if let Some(dx) = cg.input {
            d = dx;
        }
    }
    Ok(())
}

/// Eval-mode logits without touching `params`.
pub fn infer<T: Scalar>(
    params: &ModelParams<T>,
    config: &ModelConfig,
    input: &Tensor<T>,
) -> Result<Tensor<T>> {
    check_input(config, input)?;
    let mut x: Option<Tensor<T>> = None;
    for block in &params.blocks {
        let mut stats = block.stats.clone();
        let (y, _) = block_forward(block, &mut stats, x.as_ref().unwrap_or(input), Mode::Eval)?;
        x = Some(y);
    }
    let mut x = x.expect("at least one block");
    if let Some(att) = &params.attention {
        x = self_attention(att, &x)?.0;
    }
    let (pooled, _) = global_avg_pool(&x)?;
    Ok(linear(&pooled, &params.head_weight.value, &params.head_bias.value)?.0)
}

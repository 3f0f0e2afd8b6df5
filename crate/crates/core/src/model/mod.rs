//! The five-block 3D CNN, its parameters and checkpoint format.

mod checkpoint;
mod config;
mod network;
mod params;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, load_checkpoint_for, save_checkpoint,
    Checkpoint, Metadata, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use config::ModelConfig;
pub use network::{
    backward, forward, infer, self_attention, self_attention_backward, AttentionCache, ForwardCache,
    BN_EPSILON, BN_MOMENTUM,
};
pub use params::{AttentionParams, ConvBlock, ModelParams, Param, ParamKind};

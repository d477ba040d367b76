//! Encode-process-decode graph transformer with hand-written reverse mode.
//!
//! Encoder: `Linear -> ReLU -> Linear -> RMSNorm`. Each processor block:
//! `Z' = RMSNorm(MMHA(Z, A) + Z)`, `Z = RMSNorm(GatedMLP(Z') + Z')`.
//! Decoder: `Linear -> RMSNorm -> ReLU -> Linear`.

mod attention;
mod config;
mod layers;
mod net;
mod params;

pub use config::{param_count, MaskMode, ModelConfig};
pub use layers::{gelu, gelu_grad, rmsnorm};
pub use net::{
    backward, backward_from_cache, block_forward, forward, forward_with_cache, gated_mlp_layer, masked_attention,
    ForwardCache, Gradients,
};
pub use params::{BlockIdx, LinearIdx, ModelParams, ParamLayout, TensorKind, TensorSpec};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite activation in {layer} (node {node})")]
    NonFinite { layer: String, node: usize },
}

//! Vision Transformer encoder: patch embedding with a class token and
//! learned positions, pre-norm multi-head self-attention blocks, and a
//! softmax classification head read from the class token.

mod config;
mod model;
mod params;

pub use config::ModelConfig;
pub use model::{
    attention, attention_block, classify, embed, encoder_layer, ffn_block, forward,
    multi_head_attention, patchify, predict, Forward,
    LayerVars, ParamVars,
};
pub use params::{init_params, LayerParams, ViTParams};

use thiserror::Error;

use crate::tensor::TensorError;

/// LayerNorm epsilon used throughout the encoder.
pub const LN_EPS: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("tensor {name}: expected shape {expected:?}, found {found:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("tensor {0} is missing")]
    Missing(String),
    #[error("unexpected tensor {0}")]
    Unexpected(String),
    #[error("{0}")]
    Input(String),
}

pub type Result<T> = std::result::Result<T, ModelError>;

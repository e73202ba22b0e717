//! Adapter-augmented transformer encoder for token classification.

mod checkpoint;
mod config;
mod layers;
mod network;
pub mod ops;
mod optim;

use thiserror::Error;

pub use checkpoint::{Checkpoint, TensorRecord, CHECKPOINT_VERSION};
pub use config::{HeadKind, ModelConfig};
pub use layers::{
    adapter_attention, add_norm, ffn, modified_layer_forward, multi_head_attention,
    standard_layer_forward, AdapterParams, BaseLayerParams, INIT_STD,
};
pub use network::{cross_entropy, Batch, ForwardPass, Gradients, Head, HeadGrads, Layer, Model, TensorView};
pub use optim::{Adam, AdamConfig};

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("sequence of length {len} exceeds the maximum of {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("every position in the batch is ignored")]
    AllIgnored,
    #[error("forward pass was not recorded")]
    NoGraph,
    #[error("bad model configuration: {0}")]
    BadConfig(String),
    #[error("token id {id} is outside a vocabulary of {vocab_size}")]
    TokenOutOfRange { id: usize, vocab_size: usize },
    #[error("label {label} is outside a scheme of {n_tags} tags")]
    LabelOutOfRange { label: usize, n_tags: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

//! Encoder-decoder transformer: configuration, parameters, forward pass,
//! loss, gradients and checkpoints.

mod batch;
pub mod checkpoint;
mod config;
mod forward;
pub mod gradcheck;
mod params;

pub use batch::Batch;
pub use checkpoint::{Checkpoint, CheckpointHeader};
pub use config::{count_params, ModelConfig};
pub use forward::{
    argmax, batch_loss, encode_source, forward, loss, loss_and_gradients, next_token_log_probs, token_accuracy,
    DropoutCtx, EncodedSource,
};
pub use params::{
    init_params, init_params_with_std, shapes, Attention, DecoderLayer, EncoderLayer, FeedForward, Norm, Parameters,
    Weights, INIT_STD,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("sequence of length {len} exceeds max_positions {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("batch has no supervised target positions")]
    AllPadTarget,
    #[error("invalid batch: {0}")]
    InvalidBatch(String),
    #[error("checkpoint format error: {0}")]
    Checkpoint(String),
    #[error("checkpoint is incompatible: {0}")]
    Incompatible(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

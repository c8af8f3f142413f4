//! Adam with bias correction, the warmup/linear-decay schedule, gradient
//! accumulation, dropout scheduling and the pretrain/finetune loops.

mod adam;
mod batching;
mod config;
mod schedule;
mod train;

pub use adam::{accumulate_gradients, adam_step, AdamHyper, OptimizerState};
pub use batching::{plan_batches, BatchPlan};
pub use config::{DropoutPhase, TrainConfig};
pub use schedule::LrSchedule;
pub use train::{
    finetune, pretrain, run_training, validation_loss, EpochSource, FinetuneSource, LogRow, PretrainSource,
    RunOptions, Start, StepReport, TrainOutcome, Trainer, METRICS_HEADER,
};

use thiserror::Error;

use crate::model::ModelError;

#[derive(Debug, Error)]
pub enum OptimError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("step {step} is outside the schedule of {total} steps")]
    StepOutOfRange { step: u64, total: u64 },
    #[error("non-finite gradient in {name}")]
    NonFiniteGradient { name: String },
    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: u64 },
    #[error("training data is empty")]
    EmptyDataset,
    #[error("expected {expected} microbatches, got {got}")]
    MicrobatchCount { expected: usize, got: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

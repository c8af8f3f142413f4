//! Desk-scale denoising sequence-to-sequence pretraining, summarization
//! finetuning, beam-search generation and ROUGE/abstractiveness evaluation.

pub mod noising;
pub mod optim;
pub mod rng;
pub mod textnorm;
pub mod tokenizer;
pub mod autodiff;
pub mod data;
pub mod metrics;
pub mod decode;
pub mod model;
pub mod tensor;

//! Alternating causal / masked language-model pretraining on a single
//! shared-parameter transformer.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`]: dense tensors and a reverse-mode differentiation tape.
//! * [`model`]: the mask-switchable transformer language model.
//! * [`objectives`]: next-token and masked-token batch construction and losses.
//! * [`schedule`]: the `x_CLM+y_MLM` schedule grammar, learning-rate
//!   schedules, AdamW and the alternating training loop.
//! * [`data`]: text cleaning, BPE tokenization and sequence packing.
//! * [`eval`]: sentence scoring and minimal-pair accuracy.

pub mod data;
pub mod error;
pub mod eval;
pub mod model;
pub mod objectives;
pub mod schedule;
pub mod tensor;

pub use error::{Error, Result};
pub use model::{AttentionMask, MaskMode, ModelConfig, TransformerLM};
pub use objectives::{ClmBatch, CorruptedBatch, MaskingPolicy, MaskingStrategy};
pub use schedule::{
    AdamW, AdamWConfig, LrScheduleKind, LrScheduleSpec, Objective, Phase, TrainingSchedule,
};
pub use tensor::{Grid, Tape, Tensor, Var};

//! Objective alternation: the `x_CLM+y_MLM` schedule grammar, learning-rate
//! schedules, AdamW and the training loop.

mod adamw;
mod grammar;
mod lr;
mod trainer;

pub use adamw::{AdamW, AdamWConfig};
pub use grammar::{format_schedule, parse_schedule, EpochSlot, Objective, Phase, TrainingSchedule};
pub use lr::{lr_at, LrScheduleKind, LrScheduleSpec};
pub use trainer::{
    run_training, train_step, EpochRecord, LrTimeline, ObjectiveSettings, StepRecord,
    TrainObserver, TrainState, TrainerConfig,
};

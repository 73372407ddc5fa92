use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{AdamW, AdamWConfig, LrScheduleSpec, Objective, TrainingSchedule};
use crate::data::PackedDataset;
use crate::error::{contract, Error, Result};
use crate::model::{MaskMode, TransformerLM};
use crate::objectives::{
    clm_loss, make_clm_batch, make_mlm_batch, mlm_loss, MaskingPolicy, VocabView,
};
use crate::tensor::Tape;

/// Which step counter drives each objective's learning-rate schedule.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LrTimeline {
    /// CLM steps form one timeline and MLM steps another.
    PerObjective,
    /// Both schedules read the global step over the whole run.
    Global,
}

impl LrTimeline {
    pub fn name(self) -> &'static str {
        match self {
            Self::PerObjective => "per-objective",
            Self::Global => "global",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "per-objective" => Some(Self::PerObjective),
            "global" => Some(Self::Global),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ObjectiveSettings {
    pub lr: LrScheduleSpec,
    pub batch_size: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainerConfig {
    pub schedule: TrainingSchedule,
    pub clm: ObjectiveSettings,
    pub mlm: ObjectiveSettings,
    pub optimizer: AdamWConfig,
    pub masking: MaskingPolicy,
    pub vocab: VocabView,
    pub lr_timeline: LrTimeline,
    /// Seeds row shuffling and MLM corruption.
    pub seed: u64,
    /// Steps between logged records; 0 disables step logging.
    pub log_every: u64,
}

impl TrainerConfig {
    pub fn settings(&self, objective: Objective) -> &ObjectiveSettings {
        match objective {
            Objective::Clm => &self.clm,
            Objective::Mlm => &self.mlm,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for s in [&self.clm, &self.mlm] {
            s.lr.validate()?;
            if s.batch_size == 0 {
                return Err(Error::Config("batch_size must be positive".into()));
            }
        }
        self.optimizer.validate()?;
        self.masking.validate()
    }

    pub fn steps_per_epoch(&self, objective: Objective, rows: usize) -> u64 {
        rows.div_ceil(self.settings(objective).batch_size) as u64
    }

    /// Length of the step timeline that `objective`'s schedule spans.
    pub fn timeline_steps(&self, objective: Objective, rows: usize) -> u64 {
        match self.lr_timeline {
            LrTimeline::PerObjective => {
                self.steps_per_epoch(objective, rows) * self.schedule.epochs_of(objective) as u64
            }
            LrTimeline::Global => self
                .schedule
                .phases()
                .iter()
                .map(|p| self.steps_per_epoch(p.objective, rows) * p.epochs as u64)
                .sum(),
        }
    }
}

/// Everything that evolves during training besides the parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    /// Completed epochs.
    pub epoch: usize,
    /// Optimizer steps taken over the whole run.
    pub step: u64,
    pub clm_steps: u64,
    pub mlm_steps: u64,
    pub optimizer: AdamW,
    pub rng: ChaCha8Rng,
}

impl TrainState {
    pub fn new(config: &TrainerConfig, model: &TransformerLM) -> Self {
        Self {
            epoch: 0,
            step: 0,
            clm_steps: 0,
            mlm_steps: 0,
            optimizer: AdamW::new(config.optimizer.clone(), model.params()),
            rng: ChaCha8Rng::seed_from_u64(config.seed),
        }
    }

    pub fn objective_steps(&self, objective: Objective) -> u64 {
        match objective {
            Objective::Clm => self.clm_steps,
            Objective::Mlm => self.mlm_steps,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub epoch: usize,
    pub phase_index: usize,
    pub objective: Objective,
    /// Global step count after this update.
    pub step: u64,
    pub lr: f64,
    pub loss: f64,
    pub tokens: usize,
    /// Whether this step falls on the logging interval.
    pub log: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub phase_index: usize,
    pub objective: Objective,
    pub step: u64,
    pub lr: f64,
    /// Token-weighted mean training loss over the epoch.
    pub mean_loss: f64,
    pub tokens: usize,
}

/// Callbacks from [`run_training`]. At a phase boundary `on_phase_end` runs
/// before `on_epoch_end`.
pub trait TrainObserver {
    fn on_step(&mut self, _record: &StepRecord) -> Result<()> {
        Ok(())
    }

    fn on_phase_end(
        &mut self,
        _record: &EpochRecord,
        _model: &TransformerLM,
        _state: &TrainState,
    ) -> Result<()> {
        Ok(())
    }

    fn on_epoch_end(
        &mut self,
        _record: &EpochRecord,
        _model: &TransformerLM,
        _state: &TrainState,
    ) -> Result<()> {
        Ok(())
    }
}

impl TrainObserver for () {}

/// One forward/backward/update on the rows `batch`. Returns (loss, lr).
pub fn train_step(
    model: &mut TransformerLM,
    batch: &PackedDataset,
    objective: Objective,
    config: &TrainerConfig,
    state: &mut TrainState,
    total_rows: usize,
) -> Result<(f64, f64)> {
    let mut tape = Tape::new();
    let vars = model.bind(&mut tape);
    let loss = match objective {
        Objective::Clm => {
            let b = make_clm_batch(&batch.sequences, None)?;
            let logits =
                model.forward_bound(&mut tape, &vars, &b.inputs, MaskMode::Causal, None)?;
            clm_loss(&mut tape, logits, &b)?
        }
        Objective::Mlm => {
            let b = make_mlm_batch(
                &batch.sequences,
                &batch.word_starts,
                &config.masking,
                &config.vocab,
                &mut state.rng,
            )?;
            let logits =
                model.forward_bound(&mut tape, &vars, &b.inputs, MaskMode::Bidirectional, None)?;
            mlm_loss(&mut tape, logits, &b)?
        }
    };
    let value = tape.item_f64(loss);
    if !value.is_finite() {
        return Err(Error::NonFiniteLoss {
            epoch: state.epoch,
            step: state.step + 1,
        });
    }
    tape.backward(loss)?;

    let timeline = config.timeline_steps(objective, total_rows);
    let at = match config.lr_timeline {
        super::LrTimeline::PerObjective => state.objective_steps(objective),
        super::LrTimeline::Global => state.step,
    };
    let lr = config
        .settings(objective)
        .lr
        .lr_at(at.min(timeline), timeline)?;

    let zeros: Vec<Vec<f32>> = model
        .params()
        .iter()
        .map(|p| vec![0.0; p.numel()])
        .collect();
    let grads: Vec<&[f32]> = vars
        .iter()
        .zip(&zeros)
        .map(|(&v, z)| tape.grad(v).unwrap_or(z.as_slice()))
        .collect();
    state.optimizer.step(model.params_mut(), &grads, lr)?;
    state.step += 1;
    match objective {
        Objective::Clm => state.clm_steps += 1,
        Objective::Mlm => state.mlm_steps += 1,
    }
    Ok((value, lr))
}

/// Trains from `state.epoch` to the end of the schedule. Each epoch resolves
/// its objective, shuffles the rows, and steps through them in batches;
/// optimizer moments carry across phase switches.
pub fn run_training(
    model: &mut TransformerLM,
    data: &PackedDataset,
    config: &TrainerConfig,
    state: &mut TrainState,
    observer: &mut dyn TrainObserver,
) -> Result<()> {
    config.validate()?;
    if data.rows() == 0 {
        return Err(contract("training data has no rows"));
    }
    if data.seq_len() > model.config().max_seq_len {
        return Err(Error::Config(format!(
            "sequence length {} exceeds model max_seq_len {}",
            data.seq_len(),
            model.config().max_seq_len
        )));
    }
    if config.vocab.size != model.config().vocab_size {
        return Err(Error::Config(format!(
            "tokenizer vocabulary {} differs from model vocab_size {}",
            config.vocab.size,
            model.config().vocab_size
        )));
    }
    let rows = data.rows();
    while state.epoch < config.schedule.total_epochs() {
        let epoch = state.epoch;
        let slot = config.schedule.objective_for_epoch(epoch)?;
        let objective = slot.objective;
        let mut order: Vec<usize> = (0..rows).collect();
        order.shuffle(&mut state.rng);

        let (mut loss_sum, mut tokens, mut lr) = (0.0f64, 0usize, 0.0);
        for chunk in order.chunks(config.settings(objective).batch_size) {
            let batch = data.select(chunk)?;
            let (loss, step_lr) = train_step(model, &batch, objective, config, state, rows)?;
            let n = chunk.len() * data.seq_len();
            loss_sum += loss * n as f64;
            tokens += n;
            lr = step_lr;
            observer.on_step(&StepRecord {
                epoch,
                phase_index: slot.phase_index,
                objective,
                step: state.step,
                lr,
                loss,
                tokens: n,
                log: config.log_every > 0 && state.step % config.log_every == 0,
            })?;
        }
        state.epoch += 1;
        let record = EpochRecord {
            epoch,
            phase_index: slot.phase_index,
            objective,
            step: state.step,
            lr,
            mean_loss: loss_sum / tokens as f64,
            tokens,
        };
        if config.schedule.ends_phase(epoch) {
            observer.on_phase_end(&record, model, state)?;
        }
        observer.on_epoch_end(&record, model, state)?;
    }
    Ok(())
}

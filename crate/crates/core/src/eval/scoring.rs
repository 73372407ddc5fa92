use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::ScoringMode;
use crate::data::{special, PackedDataset};
use crate::error::{contract, Result};
use crate::model::{MaskMode, TransformerLM};
use crate::objectives::{make_clm_batch, make_mlm_batch, MaskingPolicy, VocabView};
use crate::schedule::Objective;
use crate::tensor::{Grid, Tape};

fn log_prob(row: &[f32], target: u32) -> f64 {
    let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
    let z: f64 = row.iter().map(|&v| (v as f64 - max).exp()).sum();
    row[target as usize] as f64 - max - z.ln()
}

fn check_length(model: &TransformerLM, len: usize) -> Result<()> {
    if len > model.config().max_seq_len {
        return Err(contract(format!(
            "sentence of {len} positions exceeds max_seq_len {}",
            model.config().max_seq_len
        )));
    }
    Ok(())
}

/// `Σ_t log p(x_t | DOC, x_<t)` under the causal mask.
pub fn clm_sentence_logprob(model: &TransformerLM, tokens: &[u32]) -> Result<f64> {
    if tokens.is_empty() {
        return Err(contract("cannot score an empty sentence"));
    }
    let n = tokens.len();
    check_length(model, n + 1)?;
    let mut input = Vec::with_capacity(n + 1);
    input.push(special::DOC);
    input.extend_from_slice(tokens);
    let logits = model.logits(&Grid::new(1, n + 1, input)?, MaskMode::Causal, None)?;
    let v = model.config().vocab_size;
    let data = logits.data();
    Ok((0..n)
        .map(|t| log_prob(&data[t * v..(t + 1) * v], tokens[t]))
        .sum())
}

/// `Σ_t log p(x_t | x with position t masked)` under the bidirectional mask,
/// scoring all masked copies in one batch.
pub fn mlm_pseudo_loglik(model: &TransformerLM, tokens: &[u32]) -> Result<f64> {
    if tokens.is_empty() {
        return Err(contract("cannot score an empty sentence"));
    }
    let n = tokens.len();
    check_length(model, n)?;
    let mut batch = Vec::with_capacity(n * n);
    for i in 0..n {
        batch.extend_from_slice(tokens);
        batch[i * n + i] = special::MASK;
    }
    let logits = model.logits(&Grid::new(n, n, batch)?, MaskMode::Bidirectional, None)?;
    let v = model.config().vocab_size;
    let data = logits.data();
    Ok((0..n)
        .map(|i| {
            let at = (i * n + i) * v;
            log_prob(&data[at..at + v], tokens[i])
        })
        .sum())
}

pub fn score_sentence(model: &TransformerLM, tokens: &[u32], mode: ScoringMode) -> Result<f64> {
    match mode {
        ScoringMode::CausalLogProb => clm_sentence_logprob(model, tokens),
        ScoringMode::PseudoLogLikelihood => mlm_pseudo_loglik(model, tokens),
    }
}

fn batches(rows: usize, size: usize) -> impl Iterator<Item = Vec<usize>> {
    let size = size.max(1);
    (0..rows.div_ceil(size)).map(move |b| (b * size..((b + 1) * size).min(rows)).collect())
}

/// `exp` of the mean per-token loss over `data`, built the way training
/// builds batches for `objective`. MLM corruption draws from a generator
/// seeded with `seed`.
pub fn perplexity(
    model: &TransformerLM,
    data: &PackedDataset,
    objective: Objective,
    policy: &MaskingPolicy,
    vocab: &VocabView,
    seed: u64,
    batch_size: usize,
) -> Result<f64> {
    if data.rows() == 0 {
        return Err(contract("perplexity needs at least one row"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut parts = Vec::new();
    for idx in batches(data.rows(), batch_size) {
        let rows = data.select(&idx)?;
        let mut tape = Tape::new();
        let (loss, count) = match objective {
            Objective::Clm => {
                let b = make_clm_batch(&rows.sequences, None)?;
                let logits = model
                    .forward(&mut tape, &b.inputs, MaskMode::Causal, None)?
                    .logits;
                let count = b.loss_mask.data().iter().filter(|&&m| m).count();
                (crate::objectives::clm_loss(&mut tape, logits, &b)?, count)
            }
            Objective::Mlm => {
                let b =
                    make_mlm_batch(&rows.sequences, &rows.word_starts, policy, vocab, &mut rng)?;
                let logits = model
                    .forward(&mut tape, &b.inputs, MaskMode::Bidirectional, None)?
                    .logits;
                let count = b.loss_mask.data().iter().filter(|&&m| m).count();
                (crate::objectives::mlm_loss(&mut tape, logits, &b)?, count)
            }
        };
        parts.push((tape.item_f64(loss), count));
    }
    let mean = match parts.as_slice() {
        [(loss, _)] => *loss,
        _ => {
            let total: f64 = parts.iter().map(|(l, c)| l * *c as f64).sum();
            total / parts.iter().map(|(_, c)| *c as f64).sum::<f64>()
        }
    };
    Ok(mean.exp())
}

/// Fraction of corrupted positions whose arg-max prediction is the original
/// token.
pub fn masked_token_accuracy(
    model: &TransformerLM,
    data: &PackedDataset,
    policy: &MaskingPolicy,
    vocab: &VocabView,
    seed: u64,
    batch_size: usize,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v = model.config().vocab_size;
    let (mut correct, mut total) = (0usize, 0usize);
    for idx in batches(data.rows(), batch_size) {
        let rows = data.select(&idx)?;
        let b = make_mlm_batch(&rows.sequences, &rows.word_starts, policy, vocab, &mut rng)?;
        let logits = model.logits(&b.inputs, MaskMode::Bidirectional, None)?;
        for (pos, (&sel, &target)) in b.loss_mask.data().iter().zip(b.targets.data()).enumerate() {
            if !sel {
                continue;
            }
            let row = &logits.data()[pos * v..(pos + 1) * v];
            let best = row
                .iter()
                .enumerate()
                .fold(
                    (0, f32::NEG_INFINITY),
                    |acc, (i, &x)| if x > acc.1 { (i, x) } else { acc },
                );
            total += 1;
            correct += usize::from(best.0 == target as usize);
        }
    }
    if total == 0 {
        return Err(contract("no masked positions to evaluate"));
    }
    Ok(correct as f64 / total as f64)
}

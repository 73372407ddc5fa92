//! Batch construction and losses for next-token (CLM) and masked-token (MLM)
//! training.

mod masking;

pub use masking::{
    apply_corruption, corrupt_row, make_mlm_batch, partition_counts, sample_span_length,
    select_mask_positions, CorruptedRow, ReplacementKind,
};

use crate::data::special;
use crate::error::{contract, Error, Result};
use crate::tensor::{Grid, Tape, Var};

/// How MLM positions are chosen.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum MaskingStrategy {
    Subword,
    WholeWord,
    Span,
}

impl MaskingStrategy {
    pub fn name(self) -> &'static str {
        match self {
            Self::Subword => "subword",
            Self::WholeWord => "whole_word",
            Self::Span => "span",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "subword" => Some(Self::Subword),
            "whole_word" => Some(Self::WholeWord),
            "span" => Some(Self::Span),
            _ => None,
        }
    }
}

/// Selection rate, replacement split and strategy for MLM corruption.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskingPolicy {
    pub select_rate: f64,
    pub mask_frac: f64,
    pub random_frac: f64,
    pub keep_frac: f64,
    pub strategy: MaskingStrategy,
    pub span_geometric_p: f64,
    pub span_max: usize,
}

impl Default for MaskingPolicy {
    fn default() -> Self {
        Self {
            select_rate: 0.15,
            mask_frac: 0.8,
            random_frac: 0.1,
            keep_frac: 0.1,
            strategy: MaskingStrategy::Span,
            span_geometric_p: 0.2,
            span_max: 10,
        }
    }
}

impl MaskingPolicy {
    pub fn with_strategy(strategy: MaskingStrategy) -> Self {
        Self {
            strategy,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.select_rate > 0.0 && self.select_rate <= 1.0) {
            return Err(Error::Config(format!(
                "masking.select_rate {} not in (0, 1]",
                self.select_rate
            )));
        }
        let fracs = [self.mask_frac, self.random_frac, self.keep_frac];
        if fracs.iter().any(|f| !(0.0..=1.0).contains(f)) {
            return Err(Error::Config("masking fractions must lie in [0, 1]".into()));
        }
        if (fracs.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "mask_frac + random_frac + keep_frac = {}, expected 1",
                fracs.iter().sum::<f64>()
            )));
        }
        if !(self.span_geometric_p > 0.0 && self.span_geometric_p < 1.0) {
            return Err(Error::Config(format!(
                "masking.span_geometric_p {} not in (0, 1)",
                self.span_geometric_p
            )));
        }
        if self.span_max == 0 {
            return Err(Error::Config("masking.span_max must be positive".into()));
        }
        Ok(())
    }
}

/// What corruption needs to know about the vocabulary.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VocabView {
    pub size: usize,
    pub mask: Option<u32>,
    /// Ids never selected for prediction nor drawn as random replacements.
    pub specials: Vec<u32>,
}

impl VocabView {
    /// A vocabulary of `size` ids whose first ids are the standard specials.
    pub fn standard(size: usize) -> Self {
        Self {
            size,
            mask: Some(special::MASK),
            specials: special::ALL.to_vec(),
        }
    }

    pub fn is_special(&self, id: u32) -> bool {
        self.specials.contains(&id)
    }
}

/// Next-token batch: `targets` is `inputs` shifted left by one.
#[derive(Clone, Debug, PartialEq)]
pub struct ClmBatch {
    pub inputs: Grid<u32>,
    pub targets: Grid<u32>,
    pub loss_mask: Grid<bool>,
    pub padding: Grid<bool>,
}

/// Masked-token batch after corruption.
#[derive(Clone, Debug, PartialEq)]
pub struct CorruptedBatch {
    pub inputs: Grid<u32>,
    /// The original token at selected positions, PAD elsewhere.
    pub targets: Grid<u32>,
    pub loss_mask: Grid<bool>,
    pub padding: Grid<bool>,
}

impl CorruptedBatch {
    /// The uncorrupted token grid.
    pub fn reconstruct(&self) -> Grid<u32> {
        let data = self
            .inputs
            .data()
            .iter()
            .zip(self.targets.data())
            .zip(self.loss_mask.data())
            .map(|((&i, &t), &m)| if m { t } else { i })
            .collect();
        Grid::new(self.inputs.rows(), self.inputs.cols(), data).expect("same shape")
    }
}

/// Builds the shifted next-token batch. The final position and any position
/// that is padding, or whose successor is padding, are excluded from the loss.
pub fn make_clm_batch(tokens: &Grid<u32>, padding: Option<&Grid<bool>>) -> Result<ClmBatch> {
    let (rows, cols) = (tokens.rows(), tokens.cols());
    if cols < 2 {
        return Err(contract(format!(
            "next-token batches need T >= 2, got {cols}"
        )));
    }
    let padding = match padding {
        Some(p) if p.rows() != rows || p.cols() != cols => {
            return Err(Error::Shape {
                op: "make_clm_batch",
                lhs: vec![rows, cols],
                rhs: vec![p.rows(), p.cols()],
            })
        }
        Some(p) => p.clone(),
        None => Grid::filled(rows, cols, false),
    };
    let mut targets = Grid::filled(rows, cols, special::PAD);
    let mut loss_mask = Grid::filled(rows, cols, false);
    for r in 0..rows {
        let (tok, pad) = (tokens.row(r), padding.row(r));
        for t in 0..cols - 1 {
            targets.set(r, t, tok[t + 1]);
            loss_mask.set(r, t, !pad[t] && !pad[t + 1]);
        }
    }
    Ok(ClmBatch {
        inputs: tokens.clone(),
        targets,
        loss_mask,
        padding,
    })
}

/// Mean next-token cross-entropy over `batch.loss_mask`.
pub fn clm_loss(tape: &mut Tape, logits: Var, batch: &ClmBatch) -> Result<Var> {
    tape.cross_entropy(logits, batch.targets.data(), batch.loss_mask.data())
}

/// Mean cross-entropy over selected positions only.
pub fn mlm_loss(tape: &mut Tape, logits: Var, batch: &CorruptedBatch) -> Result<Var> {
    tape.cross_entropy(logits, batch.targets.data(), batch.loss_mask.data())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn clm_batch_shifts_targets() {
        let tokens = Grid::new(1, 3, vec![5, 6, 7]).unwrap();
        let b = make_clm_batch(&tokens, None).unwrap();
        assert_eq!(&b.targets.data()[..2], &[6, 7]);
        assert_eq!(b.loss_mask.data(), &[true, true, false]);
        assert_eq!(b.inputs, tokens);
    }

    #[test]
    fn clm_batch_padding() {
        let tokens = Grid::new(2, 3, vec![5, 6, 0, 0, 0, 0]).unwrap();
        let pad = Grid::new(2, 3, vec![false, false, true, true, true, true]).unwrap();
        let b = make_clm_batch(&tokens, Some(&pad)).unwrap();
        assert_eq!(b.loss_mask.row(0), &[true, false, false]);
        assert_eq!(b.loss_mask.row(1), &[false; 3]);
    }

    #[test]
    fn clm_batch_needs_two_columns() {
        let tokens = Grid::new(2, 1, vec![5, 6]).unwrap();
        assert!(matches!(
            make_clm_batch(&tokens, None),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn clm_loss_uniform_and_perfect() {
        let tokens = Grid::new(1, 4, vec![4, 5, 6, 7]).unwrap();
        let b = make_clm_batch(&tokens, None).unwrap();
        let mut tape = Tape::new();
        let uniform = tape.constant(Tensor::zeros(&[1, 4, 16]));
        let loss = clm_loss(&mut tape, uniform, &b).unwrap();
        assert!((tape.item_f64(loss) - 16f64.ln()).abs() < 1e-6);

        let perfect = Tensor::from_fn(&[1, 4, 16], |i| {
            let (t, v) = (i / 16, i % 16);
            if t < 3 && v == tokens.row(0)[t + 1] as usize {
                40.0
            } else {
                0.0
            }
        });
        let perfect = tape.constant(perfect);
        let loss = clm_loss(&mut tape, perfect, &b).unwrap();
        assert!(tape.item_f64(loss) < 1e-6);
    }

    #[test]
    fn clm_loss_matches_direct_cross_entropy() {
        let tokens = Grid::new(2, 4, vec![4, 5, 6, 7, 8, 9, 4, 5]).unwrap();
        let b = make_clm_batch(&tokens, None).unwrap();
        let logits = Tensor::from_fn(&[2, 4, 12], |i| ((i * 37 % 23) as f32 - 11.0) * 0.1);
        let mut tape = Tape::new();
        let x = tape.constant(logits);
        let via = clm_loss(&mut tape, x, &b).unwrap();
        let mut targets = Vec::new();
        let mut sel = Vec::new();
        for r in 0..2 {
            for t in 0..4 {
                targets.push(if t < 3 { tokens.row(r)[t + 1] } else { 0 });
                sel.push(t < 3);
            }
        }
        let direct = tape.cross_entropy(x, &targets, &sel).unwrap();
        assert_eq!(tape.item_f64(via), tape.item_f64(direct));
    }

    #[test]
    fn policy_validation() {
        assert!(MaskingPolicy::default().validate().is_ok());
        let p = MaskingPolicy {
            keep_frac: 0.2,
            ..MaskingPolicy::default()
        };
        assert!(matches!(p.validate(), Err(Error::Config(_))));
        let p = MaskingPolicy {
            select_rate: 0.0,
            ..MaskingPolicy::default()
        };
        assert!(p.validate().is_err());
    }
}

//! The unified transformer language model.
//!
//! One parameter set serves both objectives. The only thing that changes
//! between next-token and masked-token training is the attention mask passed
//! to [`TransformerLM::forward`].

mod transformer;

pub use transformer::{attention, AttentionOutput, Forward, TransformerLM};

use crate::error::{contract, Error, Result};

/// Hyperparameters of [`TransformerLM`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    pub layers: usize,
    pub attention_heads: usize,
    pub hidden_size: usize,
    pub intermediate_size: usize,
    pub vocab_size: usize,
    pub max_seq_len: usize,
    pub position_buckets: usize,
    pub seed: u64,
}

impl ModelConfig {
    /// A small configuration suited to tests and desk-scale runs.
    pub fn tiny(vocab_size: usize) -> Self {
        Self {
            layers: 2,
            attention_heads: 2,
            hidden_size: 16,
            intermediate_size: 32,
            vocab_size,
            max_seq_len: 16,
            position_buckets: 8,
            seed: 0,
        }
    }

    /// `layers` may be zero (an embedding-plus-head model); every other size
    /// must be positive.
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("attention_heads", self.attention_heads),
            ("hidden_size", self.hidden_size),
            ("intermediate_size", self.intermediate_size),
            ("vocab_size", self.vocab_size),
            ("max_seq_len", self.max_seq_len),
            ("position_buckets", self.position_buckets),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("model.{name} must be positive")));
        }
        if self.hidden_size % self.attention_heads != 0 {
            return Err(Error::Config(format!(
                "hidden_size {} is not divisible by attention_heads {}",
                self.hidden_size, self.attention_heads
            )));
        }
        if self.position_buckets > self.max_seq_len {
            return Err(Error::Config(format!(
                "position_buckets {} exceeds max_seq_len {}",
                self.position_buckets, self.max_seq_len
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_size / self.attention_heads
    }

    /// Closed-form scalar parameter count:
    ///
    /// ```text
    /// V·d                      token embedding (output head tied)
    /// + H·(2P − 1)             relative-position bias table
    /// + 2d                     final norm
    /// + L·(4d² + 3d·I + 4d)    per block: attention, GLU feed-forward, two norms
    /// ```
    pub fn parameter_count(&self) -> usize {
        let d = self.hidden_size;
        self.vocab_size * d
            + self.attention_heads * (2 * self.position_buckets - 1)
            + 2 * d
            + self.layers * self.block_parameter_count()
    }

    pub fn block_parameter_count(&self) -> usize {
        let d = self.hidden_size;
        let i = self.intermediate_size;
        4 * d * d + 3 * d * i + 4 * d
    }
}

/// Which attention pattern a forward pass uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum MaskMode {
    /// Lower-triangular: position `i` sees positions `j ≤ i`.
    Causal,
    /// Every position sees every other position.
    Bidirectional,
}

/// A `T×T` attend/block matrix plus the key padding it was built with.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttentionMask {
    seq_len: usize,
    allowed: Vec<bool>,
    padding: Vec<bool>,
}

impl AttentionMask {
    /// Builds the mode pattern, then blocks padded positions as keys.
    pub fn build(seq_len: usize, mode: MaskMode, padding: &[bool]) -> Result<Self> {
        if seq_len == 0 {
            return Err(contract("attention mask needs seq_len > 0"));
        }
        if padding.len() != seq_len {
            return Err(Error::Shape {
                op: "attention_mask",
                lhs: vec![seq_len],
                rhs: vec![padding.len()],
            });
        }
        let mut allowed = Vec::with_capacity(seq_len * seq_len);
        for i in 0..seq_len {
            for j in 0..seq_len {
                let by_mode = match mode {
                    MaskMode::Causal => j <= i,
                    MaskMode::Bidirectional => true,
                };
                allowed.push(by_mode && !padding[j]);
            }
        }
        Ok(Self {
            seq_len,
            allowed,
            padding: padding.to_vec(),
        })
    }

    pub fn unpadded(seq_len: usize, mode: MaskMode) -> Result<Self> {
        Self::build(seq_len, mode, &vec![false; seq_len])
    }

    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    pub fn allows(&self, query: usize, key: usize) -> bool {
        self.allowed[query * self.seq_len + key]
    }

    /// Row-major `T×T` flags, 1 = attend.
    pub fn allowed(&self) -> &[bool] {
        &self.allowed
    }

    pub fn padding(&self) -> &[bool] {
        &self.padding
    }

    /// The matrix as 0/1 rows, for display and tests.
    pub fn to_rows(&self) -> Vec<Vec<u8>> {
        self.allowed
            .chunks(self.seq_len)
            .map(|r| r.iter().map(|&a| a as u8).collect())
            .collect()
    }
}

/// Bucket index of the signed distance `key − query`, clipped to
/// `±(buckets − 1)` and shifted so that zero distance maps to `buckets − 1`.
pub fn relative_bucket(query: usize, key: usize, buckets: usize) -> usize {
    let reach = buckets as i64 - 1;
    let dist = (key as i64 - query as i64).clamp(-reach, reach);
    (dist + reach) as usize
}

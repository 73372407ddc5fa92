//! Sentence scoring under both objectives and minimal-pair accuracy.

mod scoring;

pub use scoring::{
    clm_sentence_logprob, masked_token_accuracy, mlm_pseudo_loglik, perplexity, score_sentence,
};

use std::collections::BTreeMap;
use std::fmt;

use crate::error::{contract, Result};

/// A grammatical sentence and its ungrammatical counterpart.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MinimalPair {
    pub phenomenon: String,
    pub good: String,
    pub bad: String,
}

/// How a sentence is scored.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ScoringMode {
    /// Summed next-token log-probabilities under the causal mask.
    CausalLogProb,
    /// Summed masked-token log-probabilities, one masked copy per position.
    PseudoLogLikelihood,
}

impl ScoringMode {
    pub fn name(self) -> &'static str {
        match self {
            Self::CausalLogProb => "clm",
            Self::PseudoLogLikelihood => "pll",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "clm" => Some(Self::CausalLogProb),
            "pll" => Some(Self::PseudoLogLikelihood),
            _ => None,
        }
    }
}

impl fmt::Display for ScoringMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct PhenomenonCount {
    pub correct: usize,
    pub total: usize,
}

impl PhenomenonCount {
    pub fn accuracy(&self) -> f64 {
        self.correct as f64 / self.total as f64
    }
}

/// Per-phenomenon and macro-averaged minimal-pair accuracy.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub per_phenomenon: BTreeMap<String, PhenomenonCount>,
    pub scoring_mode: ScoringMode,
}

impl EvalReport {
    pub fn n_pairs(&self) -> usize {
        self.per_phenomenon.values().map(|c| c.total).sum()
    }

    /// Unweighted mean of the per-phenomenon accuracies.
    pub fn macro_average(&self) -> f64 {
        let n = self.per_phenomenon.len() as f64;
        self.per_phenomenon
            .values()
            .map(PhenomenonCount::accuracy)
            .sum::<f64>()
            / n
    }

    /// Fixed-width table with one line per phenomenon and a macro line.
    pub fn table(&self) -> String {
        let width = self
            .per_phenomenon
            .keys()
            .map(String::len)
            .max()
            .unwrap_or(0)
            .max(9);
        let mut s = format!(
            "{:<width$}  {:>5}  {:>8}   ({})\n",
            "phenomenon", "pairs", "accuracy", self.scoring_mode
        );
        for (name, c) in &self.per_phenomenon {
            s.push_str(&format!(
                "{name:<width$}  {:>5}  {:>8.4}\n",
                c.total,
                c.accuracy()
            ));
        }
        s.push_str(&format!(
            "{:<width$}  {:>5}  {:>8.4}\n",
            "macro",
            self.n_pairs(),
            self.macro_average()
        ));
        s
    }
}

/// Tallies pairs with `score`; a pair is correct only if the good sentence
/// scores strictly higher.
pub fn accuracy_with<F>(
    pairs: &[MinimalPair],
    mode: ScoringMode,
    mut score: F,
) -> Result<EvalReport>
where
    F: FnMut(&str) -> Result<f64>,
{
    if pairs.is_empty() {
        return Err(contract("no minimal pairs to evaluate"));
    }
    let mut per_phenomenon: BTreeMap<String, PhenomenonCount> = BTreeMap::new();
    for pair in pairs {
        let good = score(&pair.good)?;
        let bad = score(&pair.bad)?;
        let entry = per_phenomenon.entry(pair.phenomenon.clone()).or_default();
        entry.total += 1;
        entry.correct += usize::from(good > bad);
    }
    Ok(EvalReport {
        per_phenomenon,
        scoring_mode: mode,
    })
}

/// Scores every pair with `model` after tokenizing with `tokenizer`.
/// `length_normalize` divides each score by its token count.
pub fn minimal_pair_accuracy(
    model: &crate::model::TransformerLM,
    tokenizer: &crate::data::Tokenizer,
    pairs: &[MinimalPair],
    mode: ScoringMode,
    length_normalize: bool,
) -> Result<EvalReport> {
    accuracy_with(pairs, mode, |sentence| {
        let ids = tokenizer.encode(sentence).ids;
        let s = score_sentence(model, &ids, mode)?;
        Ok(if length_normalize {
            s / ids.len() as f64
        } else {
            s
        })
    })
}

/// A rejected line of a pair file.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MalformedLine {
    pub line: usize,
    pub message: String,
}

/// Parses `phenomenon<TAB>good<TAB>bad` lines; blank lines and lines
/// starting with `#` are skipped.
pub fn parse_pairs(text: &str) -> (Vec<MinimalPair>, Vec<MalformedLine>) {
    let mut pairs = Vec::new();
    let mut bad = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let trimmed = line.trim_end_matches('\r');
        if trimmed.trim().is_empty() || trimmed.trim_start().starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = trimmed.split('\t').collect();
        let err = |message: &str| MalformedLine {
            line: i + 1,
            message: message.to_string(),
        };
        match cols.as_slice() {
            [p, g, b] if !p.trim().is_empty() && !g.trim().is_empty() && !b.trim().is_empty() => {
                if g.trim() == b.trim() {
                    bad.push(err("good and bad sentences are identical"));
                } else {
                    pairs.push(MinimalPair {
                        phenomenon: p.trim().to_string(),
                        good: g.trim().to_string(),
                        bad: b.trim().to_string(),
                    });
                }
            }
            [_, _, _] => bad.push(err("empty column")),
            _ => bad.push(err(&format!(
                "expected 3 tab-separated columns, found {}",
                cols.len()
            ))),
        }
    }
    (pairs, bad)
}

/// Serializes pairs in the format read by [`parse_pairs`].
pub fn format_pairs(pairs: &[MinimalPair]) -> String {
    pairs
        .iter()
        .map(|p| format!("{}\t{}\t{}\n", p.phenomenon, p.good, p.bad))
        .collect()
}

use rand::seq::SliceRandom;
use rand::Rng;

use super::{CorruptedBatch, MaskingPolicy, MaskingStrategy, VocabView};
use crate::data::special;
use crate::error::{Error, Result};
use crate::tensor::Grid;

/// What happened to one selected position.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ReplacementKind {
    Masked,
    Random,
    Kept,
}

/// One corrupted sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct CorruptedRow {
    pub inputs: Vec<u32>,
    pub targets: Vec<u32>,
    pub loss_mask: Vec<bool>,
    pub kinds: Vec<Option<ReplacementKind>>,
}

/// Number of positions to select from `candidates` under `rate`.
fn budget(rate: f64, candidates: usize) -> usize {
    ((rate * candidates as f64).round() as usize).clamp(1, candidates)
}

/// Draws a span length from the geometric distribution with success
/// probability `p`, truncated to `[1, max]`, by inverting its CDF.
pub fn sample_span_length<R: Rng + ?Sized>(p: f64, max: usize, rng: &mut R) -> usize {
    let q = 1.0 - p;
    let mass = 1.0 - q.powi(max as i32);
    let u: f64 = rng.gen();
    let len = ((1.0 - u * mass).ln() / q.ln()).ceil();
    (len as usize).clamp(1, max)
}

/// Chooses the positions of `tokens` to predict. Positions holding special
/// ids are never candidates. Returns sorted positions.
///
/// `word_starts[t]` marks the first subword of a word; a word runs until the
/// next start.
pub fn select_mask_positions<R: Rng + ?Sized>(
    tokens: &[u32],
    word_starts: &[bool],
    policy: &MaskingPolicy,
    vocab: &VocabView,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if word_starts.len() != tokens.len() {
        return Err(Error::Shape {
            op: "select_mask_positions",
            lhs: vec![tokens.len()],
            rhs: vec![word_starts.len()],
        });
    }
    let n = tokens.len();
    let is_cand: Vec<bool> = tokens.iter().map(|&t| !vocab.is_special(t)).collect();
    let candidates: Vec<usize> = (0..n).filter(|&i| is_cand[i]).collect();
    if candidates.is_empty() {
        return Err(Error::EmptyCandidates);
    }
    let k = budget(policy.select_rate, candidates.len());

    let mut selected = vec![false; n];
    match policy.strategy {
        MaskingStrategy::Subword => {
            for &i in candidates.choose_multiple(rng, k) {
                selected[i] = true;
            }
        }
        MaskingStrategy::WholeWord => {
            let mut word = vec![0usize; n];
            let mut current = 0;
            for i in 0..n {
                if word_starts[i] {
                    current = i;
                }
                word[i] = current;
            }
            let mut order = candidates.clone();
            order.shuffle(rng);
            let mut count = 0;
            for &i in &order {
                if count >= k {
                    break;
                }
                if selected[i] {
                    continue;
                }
                let w = word[i];
                for j in w..n {
                    if word[j] != w {
                        break;
                    }
                    if is_cand[j] && !selected[j] {
                        selected[j] = true;
                        count += 1;
                    }
                }
            }
        }
        MaskingStrategy::Span => {
            let mut added = Vec::with_capacity(k + policy.span_max);
            while added.len() < k {
                let free: Vec<usize> = candidates
                    .iter()
                    .copied()
                    .filter(|&i| !selected[i])
                    .collect();
                let start = free[rng.gen_range(0..free.len())];
                let len = sample_span_length(policy.span_geometric_p, policy.span_max, rng);
                let mut pos = start;
                while pos < start + len && pos < n && is_cand[pos] && !selected[pos] {
                    selected[pos] = true;
                    added.push(pos);
                    pos += 1;
                }
            }
            for &pos in &added[k..] {
                selected[pos] = false;
            }
        }
    }
    Ok((0..n).filter(|&i| selected[i]).collect())
}

/// Exact split of `k` selected positions into (masked, random, kept):
/// `round(mask_frac·k)`, `round(random_frac·k)`, and the remainder.
pub fn partition_counts(k: usize, policy: &MaskingPolicy) -> (usize, usize, usize) {
    let masked = ((policy.mask_frac * k as f64).round() as usize).min(k);
    let random = ((policy.random_frac * k as f64).round() as usize).min(k - masked);
    (masked, random, k - masked - random)
}

fn random_non_special<R: Rng + ?Sized>(
    vocab: &VocabView,
    sorted_specials: &[u32],
    rng: &mut R,
) -> u32 {
    let mut id = rng.gen_range(0..(vocab.size - sorted_specials.len()) as u32);
    for &s in sorted_specials {
        if s <= id {
            id += 1;
        }
    }
    id
}

/// Applies the mask/random/keep replacement to `positions` of `tokens`.
pub fn apply_corruption<R: Rng + ?Sized>(
    tokens: &[u32],
    positions: &[usize],
    policy: &MaskingPolicy,
    vocab: &VocabView,
    rng: &mut R,
) -> Result<CorruptedRow> {
    let mask = vocab
        .mask
        .ok_or_else(|| Error::Config("vocabulary has no [MASK] token".into()))?;
    let mut specials: Vec<u32> = vocab
        .specials
        .iter()
        .copied()
        .filter(|&s| (s as usize) < vocab.size)
        .collect();
    specials.sort_unstable();
    specials.dedup();
    if specials.len() >= vocab.size {
        return Err(Error::Config("vocabulary has no ordinary tokens".into()));
    }
    let n = tokens.len();
    if let Some(&bad) = positions.iter().find(|&&p| p >= n) {
        return Err(Error::Index {
            index: bad,
            bound: n,
            position: 0,
        });
    }

    let mut order = positions.to_vec();
    order.shuffle(rng);
    let (n_mask, n_random, _) = partition_counts(order.len(), policy);

    let mut row = CorruptedRow {
        inputs: tokens.to_vec(),
        targets: vec![special::PAD; n],
        loss_mask: vec![false; n],
        kinds: vec![None; n],
    };
    for (rank, &p) in order.iter().enumerate() {
        let kind = if rank < n_mask {
            row.inputs[p] = mask;
            ReplacementKind::Masked
        } else if rank < n_mask + n_random {
            row.inputs[p] = random_non_special(vocab, &specials, rng);
            ReplacementKind::Random
        } else {
            ReplacementKind::Kept
        };
        row.targets[p] = tokens[p];
        row.loss_mask[p] = true;
        row.kinds[p] = Some(kind);
    }
    Ok(row)
}

/// Selection followed by replacement for one sequence.
pub fn corrupt_row<R: Rng + ?Sized>(
    tokens: &[u32],
    word_starts: &[bool],
    policy: &MaskingPolicy,
    vocab: &VocabView,
    rng: &mut R,
) -> Result<CorruptedRow> {
    let positions = select_mask_positions(tokens, word_starts, policy, vocab, rng)?;
    apply_corruption(tokens, &positions, policy, vocab, rng)
}

/// Corrupts every row of `tokens`, drawing from `rng` row by row.
pub fn make_mlm_batch<R: Rng + ?Sized>(
    tokens: &Grid<u32>,
    word_starts: &Grid<bool>,
    policy: &MaskingPolicy,
    vocab: &VocabView,
    rng: &mut R,
) -> Result<CorruptedBatch> {
    let (rows, cols) = (tokens.rows(), tokens.cols());
    if word_starts.rows() != rows || word_starts.cols() != cols {
        return Err(Error::Shape {
            op: "make_mlm_batch",
            lhs: vec![rows, cols],
            rhs: vec![word_starts.rows(), word_starts.cols()],
        });
    }
    let mut inputs = Vec::with_capacity(rows * cols);
    let mut targets = Vec::with_capacity(rows * cols);
    let mut loss_mask = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        let row = corrupt_row(tokens.row(r), word_starts.row(r), policy, vocab, rng)?;
        inputs.extend(row.inputs);
        targets.extend(row.targets);
        loss_mask.extend(row.loss_mask);
    }
    let padding = tokens.data().iter().map(|&t| t == special::PAD).collect();
    Ok(CorruptedBatch {
        inputs: Grid::new(rows, cols, inputs)?,
        targets: Grid::new(rows, cols, targets)?,
        loss_mask: Grid::new(rows, cols, loss_mask)?,
        padding: Grid::new(rows, cols, padding)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{
        any, prop_assert, prop_assert_eq, prop_oneof, proptest, Just, Strategy,
    };
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn vocab() -> VocabView {
        VocabView::standard(64)
    }

    fn policy(strategy: MaskingStrategy) -> MaskingPolicy {
        MaskingPolicy::with_strategy(strategy)
    }

    fn runs(positions: &[usize]) -> Vec<usize> {
        let mut out = Vec::new();
        let mut len = 0;
        for (i, &p) in positions.iter().enumerate() {
            if i > 0 && positions[i - 1] + 1 == p {
                len += 1;
            } else {
                if len > 0 {
                    out.push(len);
                }
                len = 1;
            }
        }
        if len > 0 {
            out.push(len);
        }
        out
    }

    #[test]
    fn subword_selects_exact_budget() {
        let tokens: Vec<u32> = (10..30).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let pos = select_mask_positions(
            &tokens,
            &[true; 20],
            &policy(MaskingStrategy::Subword),
            &vocab(),
            &mut rng,
        )
        .unwrap();
        assert_eq!(pos.len(), 3);
    }

    #[test]
    fn whole_word_expands_to_the_word() {
        // Words: [4 5 6] [7] [8 9] ...; with one candidate word selected per draw.
        let tokens = vec![4, 5, 6, 7];
        let starts = vec![true, false, false, true];
        let p = MaskingPolicy {
            select_rate: 0.25,
            ..policy(MaskingStrategy::WholeWord)
        };
        let mut saw_three = false;
        for seed in 0..50 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pos = select_mask_positions(&tokens, &starts, &p, &vocab(), &mut rng).unwrap();
            assert!(pos == vec![0, 1, 2] || pos == vec![3], "{pos:?}");
            saw_three |= pos.len() == 3;
        }
        assert!(saw_three);
    }

    #[test]
    fn specials_are_never_selected() {
        let tokens = vec![1, 5, 6, 0, 2, 7];
        for strategy in [
            MaskingStrategy::Subword,
            MaskingStrategy::WholeWord,
            MaskingStrategy::Span,
        ] {
            let p = MaskingPolicy {
                select_rate: 1.0,
                ..policy(strategy)
            };
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            let pos = select_mask_positions(&tokens, &[true; 6], &p, &vocab(), &mut rng).unwrap();
            assert_eq!(pos, vec![1, 2, 5]);
        }
    }

    #[test]
    fn no_candidates_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let err = select_mask_positions(
            &[0, 1, 2],
            &[true; 3],
            &policy(MaskingStrategy::Subword),
            &vocab(),
            &mut rng,
        );
        assert_eq!(err, Err(Error::EmptyCandidates));
    }

    #[test]
    fn span_selection_is_contiguous_runs() {
        let tokens: Vec<u32> = (4..64).chain(4..64).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = policy(MaskingStrategy::Span);
        let mut long_run = false;
        for _ in 0..50 {
            let pos =
                select_mask_positions(&tokens, &vec![true; tokens.len()], &p, &vocab(), &mut rng)
                    .unwrap();
            assert_eq!(pos.len(), 18);
            long_run |= runs(&pos).iter().any(|&r| r >= 3);
        }
        assert!(long_run);
    }

    #[test]
    fn span_lengths_follow_truncated_geometric() {
        use statrs::distribution::{ChiSquared, ContinuousCDF};
        let (p, max, draws) = (0.2, 10usize, 100_000usize);
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let mut counts = vec![0usize; max + 1];
        for _ in 0..draws {
            counts[sample_span_length(p, max, &mut rng)] += 1;
        }
        assert_eq!(counts[0], 0);
        let weights: Vec<f64> = (1..=max)
            .map(|l| p * (1.0 - p).powi(l as i32 - 1))
            .collect();
        let z: f64 = weights.iter().sum();
        let stat: f64 = (1..=max)
            .map(|l| {
                let e = draws as f64 * weights[l - 1] / z;
                (counts[l] as f64 - e).powi(2) / e
            })
            .sum();
        let p_value = 1.0 - ChiSquared::new((max - 1) as f64).unwrap().cdf(stat);
        assert!(p_value > 0.01, "chi2 {stat}, p {p_value}");
    }

    #[test]
    fn partition_examples() {
        let p = MaskingPolicy::default();
        assert_eq!(partition_counts(10, &p), (8, 1, 1));
        assert_eq!(partition_counts(1, &p), (1, 0, 0));
        assert_eq!(partition_counts(3, &p), (2, 0, 1));
        for k in 1..=50 {
            let (m, r, c) = partition_counts(k, &p);
            assert_eq!(m + r + c, k);
        }
    }

    #[test]
    fn corruption_counts_and_invariants() {
        let tokens: Vec<u32> = (4..24).collect();
        let positions: Vec<usize> = (0..10).map(|i| i * 2).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let row = apply_corruption(
            &tokens,
            &positions,
            &MaskingPolicy::default(),
            &vocab(),
            &mut rng,
        )
        .unwrap();
        let count = |k| row.kinds.iter().filter(|x| **x == Some(k)).count();
        assert_eq!(count(ReplacementKind::Masked), 8);
        assert_eq!(count(ReplacementKind::Random), 1);
        assert_eq!(count(ReplacementKind::Kept), 1);
        for t in 0..tokens.len() {
            if row.loss_mask[t] {
                assert_eq!(row.targets[t], tokens[t]);
            } else {
                assert_eq!(row.inputs[t], tokens[t]);
            }
            if row.kinds[t] == Some(ReplacementKind::Masked) {
                assert_eq!(row.inputs[t], special::MASK);
            }
        }
    }

    #[test]
    fn random_replacements_are_never_special() {
        let tokens: Vec<u32> = (4..24).collect();
        let positions: Vec<usize> = (0..10).collect();
        let v = VocabView::standard(8);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..10_000 {
            let row =
                apply_corruption(&tokens, &positions, &MaskingPolicy::default(), &v, &mut rng)
                    .unwrap();
            for t in 0..tokens.len() {
                if row.kinds[t] == Some(ReplacementKind::Random) {
                    assert!(!v.is_special(row.inputs[t]) && (row.inputs[t] as usize) < v.size);
                }
            }
        }
    }

    #[test]
    fn missing_mask_is_config_error() {
        let v = VocabView {
            mask: None,
            ..vocab()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let err = apply_corruption(&[5, 6], &[0], &MaskingPolicy::default(), &v, &mut rng);
        assert!(matches!(err, Err(Error::Config(_))));
    }

    #[test]
    fn subword_rate_over_many_sequences() {
        let p = policy(MaskingStrategy::Subword);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut selected = 0usize;
        let n = 10_000;
        for _ in 0..n {
            let tokens: Vec<u32> = (0..128).map(|_| rng.gen_range(4..64)).collect();
            selected += select_mask_positions(&tokens, &[true; 128], &p, &vocab(), &mut rng)
                .unwrap()
                .len();
        }
        let rate = selected as f64 / (n * 128) as f64;
        assert!((0.13..=0.17).contains(&rate), "{rate}");
    }

    fn arb_row() -> impl Strategy<Value = (Vec<u32>, Vec<bool>)> {
        (2usize..80).prop_flat_map(|n| {
            (
                proptest::collection::vec(prop_oneof![9 => 4u32..64, 1 => 0u32..4], n),
                proptest::collection::vec(any::<bool>(), n),
            )
        })
    }

    fn arb_strategy() -> impl Strategy<Value = MaskingStrategy> {
        prop_oneof![
            Just(MaskingStrategy::Subword),
            Just(MaskingStrategy::WholeWord),
            Just(MaskingStrategy::Span)
        ]
    }

    proptest! {
        #[test]
        fn corruption_reconstructs_and_is_deterministic(
            (tokens, starts) in arb_row(),
            strategy in arb_strategy(),
            seed in any::<u64>(),
        ) {
            let p = policy(strategy);
            let run = |seed| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                corrupt_row(&tokens, &starts, &p, &vocab(), &mut rng)
            };
            let a = run(seed);
            if tokens.iter().all(|&t| t < 4) {
                prop_assert_eq!(a, Err(Error::EmptyCandidates));
                return Ok(());
            }
            let a = a.unwrap();
            prop_assert_eq!(&a, &run(seed).unwrap());
            for t in 0..tokens.len() {
                let original = if a.loss_mask[t] { a.targets[t] } else { a.inputs[t] };
                prop_assert_eq!(original, tokens[t]);
                if a.loss_mask[t] {
                    prop_assert!(tokens[t] >= 4);
                }
            }
            let candidates = tokens.iter().filter(|&&t| t >= 4).count();
            let k = a.loss_mask.iter().filter(|&&m| m).count();
            let want = budget(0.15, candidates);
            match strategy {
                MaskingStrategy::WholeWord => prop_assert!(k >= want),
                _ => prop_assert_eq!(k, want),
            }
        }
    }
}

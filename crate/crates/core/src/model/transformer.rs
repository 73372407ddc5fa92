use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{relative_bucket, AttentionMask, MaskMode, ModelConfig};
use crate::error::{contract, Error, Result};
use crate::tensor::{Grid, Tape, Tensor, Var};

const NORM_EPS: f32 = 1e-5;
const PER_LAYER: usize = 10;

// Parameter slots inside one block.
const ATTN_NORM_GAIN: usize = 0;
const ATTN_NORM_BIAS: usize = 1;
const QUERY: usize = 2;
const KEY: usize = 3;
const VALUE: usize = 4;
const OUTPUT: usize = 5;
const FFN_NORM_GAIN: usize = 6;
const FFN_NORM_BIAS: usize = 7;
const GATE_VALUE: usize = 8;
const FFN_OUTPUT: usize = 9;

/// Pre-norm transformer with GLU feed-forward blocks, a shared relative
/// position bias and an output head tied to the token embedding.
#[derive(Clone, Debug, PartialEq)]
pub struct TransformerLM {
    config: ModelConfig,
    names: Vec<String>,
    params: Vec<Tensor>,
}

/// Result of a forward pass: the logits and the leaves bound for parameters,
/// in [`TransformerLM::param_names`] order.
#[derive(Clone, Debug)]
pub struct Forward {
    pub logits: Var,
    pub params: Vec<Var>,
}

pub struct AttentionOutput {
    /// `[B, heads, T, d_head]`
    pub output: Var,
    /// `[B, heads, T, T]`
    pub weights: Var,
}

/// Scaled dot-product attention over `[B, heads, T, d_head]` inputs.
///
/// `masks` holds one mask per batch row, or a single mask shared by every
/// row. `bias`, when present, is added to the scores and must broadcast to
/// `[B, heads, T, T]`. Rows whose keys are all blocked produce zeros.
pub fn attention(
    tape: &mut Tape,
    q: Var,
    k: Var,
    v: Var,
    masks: &[AttentionMask],
    bias: Option<Var>,
) -> Result<AttentionOutput> {
    let shape = tape.shape(q).to_vec();
    if shape.len() != 4 || tape.shape(k) != shape.as_slice() || tape.shape(v) != shape.as_slice() {
        return Err(Error::Shape {
            op: "attention",
            lhs: shape,
            rhs: tape.shape(k).to_vec(),
        });
    }
    let (batch, seq, d_head) = (shape[0], shape[2], shape[3]);
    if masks.is_empty() || (masks.len() != 1 && masks.len() != batch) {
        return Err(contract(format!(
            "need 1 or {batch} attention masks, got {}",
            masks.len()
        )));
    }
    if masks.iter().any(|m| m.seq_len() != seq) {
        return Err(contract(
            "attention mask length differs from sequence length",
        ));
    }
    let scores = tape.matmul_bt(q, k)?;
    let mut scores = tape.scale(scores, 1.0 / (d_head as f32).sqrt());
    if let Some(b) = bias {
        scores = tape.add(scores, b)?;
    }
    let allowed: Vec<bool> = masks
        .iter()
        .flat_map(|m| m.allowed().iter().copied())
        .collect();
    let weights = tape.masked_softmax(scores, &allowed, &[masks.len(), 1, seq, seq])?;
    let output = tape.matmul(weights, v)?;
    Ok(AttentionOutput { output, weights })
}

impl TransformerLM {
    /// Deterministic initialization from `config.seed`. Weight matrices are
    /// drawn from N(0, 1/fan_in), which is N(0, 1/hidden_size) for the
    /// embedding and attention projections; norms start at gain 1, bias 0;
    /// the relative-position bias starts at zero.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let d = config.hidden_size;
        let inter = config.intermediate_size;
        let mut names = Vec::new();
        let mut params = Vec::new();
        let mut normal = |shape: &[usize], fan_in: usize| {
            let dist = Normal::new(0.0f32, 1.0 / (fan_in as f32).sqrt()).expect("positive std");
            Tensor::from_fn(shape, |_| dist.sample(&mut rng))
        };

        names.push("token_embedding".to_string());
        params.push(normal(&[config.vocab_size, d], d));
        names.push("relative_bias".to_string());
        params.push(Tensor::zeros(&[
            config.attention_heads,
            2 * config.position_buckets - 1,
        ]));
        for l in 0..config.layers {
            let p = |s: &str| format!("layers.{l}.{s}");
            names.extend([
                p("attn_norm.gain"),
                p("attn_norm.bias"),
                p("attn.query"),
                p("attn.key"),
                p("attn.value"),
                p("attn.output"),
                p("ffn_norm.gain"),
                p("ffn_norm.bias"),
                p("ffn.gate_value"),
                p("ffn.output"),
            ]);
            params.push(Tensor::full(&[d], 1.0));
            params.push(Tensor::zeros(&[d]));
            for _ in 0..4 {
                params.push(normal(&[d, d], d));
            }
            params.push(Tensor::full(&[d], 1.0));
            params.push(Tensor::zeros(&[d]));
            params.push(normal(&[d, 2 * inter], d));
            params.push(normal(&[inter, d], inter));
        }
        names.push("final_norm.gain".to_string());
        params.push(Tensor::full(&[d], 1.0));
        names.push("final_norm.bias".to_string());
        params.push(Tensor::zeros(&[d]));
        Ok(Self {
            config,
            names,
            params,
        })
    }

    /// Rebuilds a model from named tensors, checking names and shapes against
    /// a fresh initialization of `config`.
    pub fn from_params(config: ModelConfig, named: Vec<(String, Tensor)>) -> Result<Self> {
        let template = Self::new(config)?;
        if named.len() != template.params.len() {
            return Err(Error::Format {
                what: "model parameters",
                message: format!(
                    "expected {} tensors, found {}",
                    template.params.len(),
                    named.len()
                ),
            });
        }
        let mut params = Vec::with_capacity(named.len());
        for ((name, tensor), (want_name, want)) in named
            .into_iter()
            .zip(template.names.iter().zip(&template.params))
        {
            if &name != want_name || tensor.shape() != want.shape() {
                return Err(Error::Format {
                    what: "model parameters",
                    message: format!(
                        "expected {want_name} {:?}, found {name} {:?}",
                        want.shape(),
                        tensor.shape()
                    ),
                });
            }
            params.push(tensor);
        }
        Ok(Self {
            config: template.config,
            names: template.names,
            params,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn param_names(&self) -> &[String] {
        &self.names
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &self.params[i])
    }

    /// Total scalar parameters; the tied output head is counted once.
    pub fn count_parameters(&self) -> usize {
        self.params.iter().map(Tensor::numel).sum()
    }

    /// Logits `[B, T, V]` for `tokens` under `mode`. `padding` marks positions
    /// (true = pad) that are blocked as attention keys.
    pub fn forward(
        &self,
        tape: &mut Tape,
        tokens: &Grid<u32>,
        mode: MaskMode,
        padding: Option<&Grid<bool>>,
    ) -> Result<Forward> {
        let params = self.bind(tape);
        let logits = self.forward_bound(tape, &params, tokens, mode, padding)?;
        Ok(Forward { logits, params })
    }

    /// Records every parameter on `tape` as a trainable leaf.
    pub fn bind(&self, tape: &mut Tape) -> Vec<Var> {
        self.params.iter().map(|t| tape.leaf(t.clone())).collect()
    }

    /// Forward pass over parameters already bound on `tape` (see [`Self::bind`]).
    pub fn forward_bound(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        tokens: &Grid<u32>,
        mode: MaskMode,
        padding: Option<&Grid<bool>>,
    ) -> Result<Var> {
        if vars.len() != self.params.len() {
            return Err(contract(format!(
                "expected {} bound parameters, got {}",
                self.params.len(),
                vars.len()
            )));
        }
        let (batch, seq) = (tokens.rows(), tokens.cols());
        let cfg = &self.config;
        if batch == 0 || seq == 0 {
            return Err(contract("forward needs a nonempty token grid"));
        }
        if seq > cfg.max_seq_len {
            return Err(contract(format!(
                "sequence length {seq} exceeds max_seq_len {}",
                cfg.max_seq_len
            )));
        }
        if let Some(p) = padding {
            if p.rows() != batch || p.cols() != seq {
                return Err(Error::Shape {
                    op: "forward padding",
                    lhs: vec![batch, seq],
                    rhs: vec![p.rows(), p.cols()],
                });
            }
        }
        let masks: Vec<AttentionMask> = match padding {
            Some(p) => (0..batch)
                .map(|b| AttentionMask::build(seq, mode, p.row(b)))
                .collect::<Result<_>>()?,
            None => vec![AttentionMask::unpadded(seq, mode)?],
        };

        let (d, heads) = (cfg.hidden_size, cfg.attention_heads);
        let d_head = cfg.head_dim();

        let embedding = vars[0];
        let mut x = tape.embedding(embedding, tokens.data(), &[batch, seq])?;

        let buckets: Vec<usize> = (0..seq)
            .flat_map(|i| (0..seq).map(move |j| relative_bucket(i, j, cfg.position_buckets)))
            .collect();
        let bias = tape.gather_last(vars[1], &buckets, &[seq, seq])?;

        let split = |tape: &mut Tape, t: Var| -> Result<Var> {
            let r = tape.reshape(t, &[batch, seq, heads, d_head])?;
            tape.permute(r, &[0, 2, 1, 3])
        };
        for l in 0..cfg.layers {
            let p = |slot: usize| vars[2 + l * PER_LAYER + slot];
            let h = tape.layer_norm(x, p(ATTN_NORM_GAIN), p(ATTN_NORM_BIAS), NORM_EPS)?;
            let q = tape.matmul(h, p(QUERY))?;
            let q = split(tape, q)?;
            let k = tape.matmul(h, p(KEY))?;
            let k = split(tape, k)?;
            let v = tape.matmul(h, p(VALUE))?;
            let v = split(tape, v)?;
            let att = attention(tape, q, k, v, &masks, Some(bias))?.output;
            let merged = tape.permute(att, &[0, 2, 1, 3])?;
            let merged = tape.reshape(merged, &[batch, seq, d])?;
            let out = tape.matmul(merged, p(OUTPUT))?;
            x = tape.add(x, out)?;

            let h = tape.layer_norm(x, p(FFN_NORM_GAIN), p(FFN_NORM_BIAS), NORM_EPS)?;
            let gv = tape.matmul(h, p(GATE_VALUE))?;
            let act = tape.gated_gelu(gv)?;
            let out = tape.matmul(act, p(FFN_OUTPUT))?;
            x = tape.add(x, out)?;
        }
        let n = vars.len();
        let h = tape.layer_norm(x, vars[n - 2], vars[n - 1], NORM_EPS)?;
        tape.matmul_bt(h, embedding)
    }

    /// Logits as a plain tensor, without keeping the tape.
    pub fn logits(
        &self,
        tokens: &Grid<u32>,
        mode: MaskMode,
        padding: Option<&Grid<bool>>,
    ) -> Result<Tensor> {
        let mut tape = Tape::new();
        let out = self.forward(&mut tape, tokens, mode, padding)?;
        Ok(tape.value(out.logits).clone())
    }
}

#[cfg(test)]
mod tests {
    use rand::Rng;

    use super::*;
    use crate::tensor::check_gradients;

    fn config() -> ModelConfig {
        ModelConfig {
            layers: 2,
            attention_heads: 2,
            hidden_size: 16,
            intermediate_size: 32,
            vocab_size: 64,
            max_seq_len: 8,
            position_buckets: 4,
            seed: 1,
        }
    }

    fn random_tokens(rng: &mut ChaCha8Rng, b: usize, t: usize, v: u32) -> Grid<u32> {
        Grid::new(b, t, (0..b * t).map(|_| rng.gen_range(0..v)).collect()).unwrap()
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        let a = TransformerLM::new(config()).unwrap();
        let b = TransformerLM::new(config()).unwrap();
        assert_eq!(a, b);
        let mut c2 = config();
        c2.seed = 2;
        let c = TransformerLM::new(c2).unwrap();
        assert_ne!(a.params(), c.params());
    }

    #[test]
    fn projection_scale_matches_target() {
        let mut cfg = config();
        cfg.hidden_size = 64;
        cfg.attention_heads = 4;
        let m = TransformerLM::new(cfg).unwrap();
        let w = m.param("layers.0.attn.query").unwrap().data();
        let n = w.len() as f64;
        let mean = w.iter().map(|&x| x as f64).sum::<f64>() / n;
        let std = (w.iter().map(|&x| (x as f64 - mean).powi(2)).sum::<f64>() / n).sqrt();
        let target = 1.0 / 8.0;
        assert!((std - target).abs() / target < 0.2, "std {std}");
    }

    #[test]
    fn parameter_count_closed_form() {
        let cfg = ModelConfig {
            layers: 0,
            attention_heads: 1,
            hidden_size: 4,
            intermediate_size: 8,
            vocab_size: 10,
            max_seq_len: 4,
            position_buckets: 2,
            seed: 0,
        };
        let m = TransformerLM::new(cfg.clone()).unwrap();
        // 40 embedding + 3 bias-table + 8 final-norm
        assert_eq!(m.count_parameters(), 40 + 3 + 8);
        assert_eq!(m.count_parameters(), cfg.parameter_count());

        let m2 = TransformerLM::new(config()).unwrap();
        let mut doubled = config();
        doubled.layers = 4;
        let m4 = TransformerLM::new(doubled.clone()).unwrap();
        assert_eq!(
            m4.count_parameters() - m2.count_parameters(),
            2 * config().block_parameter_count()
        );
        assert_eq!(m4.count_parameters(), doubled.parameter_count());
    }

    #[test]
    fn attention_single_position_returns_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut tape = Tape::new();
        let mk =
            |rng: &mut ChaCha8Rng| Tensor::from_fn(&[1, 2, 1, 4], |_| rng.gen_range(-1.0..1.0));
        let (q, k, v) = (mk(&mut rng), mk(&mut rng), mk(&mut rng));
        let vv = v.clone();
        let (q, k, v) = (tape.leaf(q), tape.leaf(k), tape.leaf(v));
        let mask = AttentionMask::unpadded(1, MaskMode::Causal).unwrap();
        let out = attention(&mut tape, q, k, v, &[mask], None).unwrap();
        assert_eq!(tape.value(out.output).data(), vv.data());
    }

    #[test]
    fn attention_causal_blocks_future_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mk =
            |rng: &mut ChaCha8Rng| Tensor::from_fn(&[1, 1, 4, 3], |_| rng.gen_range(-1.0..1.0));
        let (q, k, v) = (mk(&mut rng), mk(&mut rng), mk(&mut rng));
        let mut v2 = v.clone();
        for c in 0..3 {
            v2.data_mut()[3 * 3 + c] += 5.0;
        }
        let mask = AttentionMask::unpadded(4, MaskMode::Causal).unwrap();
        let run = |v: Tensor| {
            let mut tape = Tape::new();
            let (qv, kv, vv) = (tape.leaf(q.clone()), tape.leaf(k.clone()), tape.leaf(v));
            let out = attention(&mut tape, qv, kv, vv, &[mask.clone()], None).unwrap();
            tape.value(out.output).data().to_vec()
        };
        let (a, b) = (run(v), run(v2));
        assert_eq!(&a[..9], &b[..9]);
        assert_ne!(&a[9..], &b[9..]);
    }

    #[test]
    fn attention_uniform_scores_give_uniform_weights() {
        let mut tape = Tape::new();
        let q = tape.leaf(Tensor::full(&[1, 1, 5, 2], 0.3));
        let k = tape.leaf(Tensor::full(&[1, 1, 5, 2], -0.7));
        let v = tape.leaf(Tensor::from_fn(&[1, 1, 5, 2], |i| i as f32));
        let mask =
            AttentionMask::build(5, MaskMode::Causal, &[false, false, false, false, true]).unwrap();
        let out = attention(&mut tape, q, k, v, &[mask.clone()], None).unwrap();
        let w = tape.value(out.weights).data();
        for i in 0..5 {
            let allowed: Vec<usize> = (0..5).filter(|&j| mask.allows(i, j)).collect();
            for j in 0..5 {
                let expect = if allowed.contains(&j) {
                    1.0 / allowed.len() as f32
                } else {
                    0.0
                };
                assert!((w[i * 5 + j] - expect).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn forward_shape_and_length_contract() {
        let m = TransformerLM::new(config()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let tokens = random_tokens(&mut rng, 1, 8, 64);
        let logits = m.logits(&tokens, MaskMode::Causal, None).unwrap();
        assert_eq!(logits.shape(), &[1, 8, 64]);
        let long = random_tokens(&mut rng, 1, 9, 64);
        assert!(matches!(
            m.logits(&long, MaskMode::Causal, None),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn causal_forward_ignores_future_tokens() {
        let m = TransformerLM::new(config()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10 {
            let tokens = random_tokens(&mut rng, 2, 8, 64);
            let t = rng.gen_range(0..7);
            let mut perturbed = tokens.clone();
            for b in 0..2 {
                let old = *perturbed.get(b, t + 1);
                perturbed.set(b, t + 1, (old + 1 + rng.gen_range(0..62)) % 64);
            }
            let a = m.logits(&tokens, MaskMode::Causal, None).unwrap();
            let b = m.logits(&perturbed, MaskMode::Causal, None).unwrap();
            for row in 0..2 {
                let base = row * 8 * 64;
                let upto = base..base + (t + 1) * 64;
                let same = a.data()[upto.clone()]
                    .iter()
                    .zip(&b.data()[upto])
                    .all(|(x, y)| x.to_bits() == y.to_bits());
                assert!(same);
            }
            let a = m.logits(&tokens, MaskMode::Bidirectional, None).unwrap();
            let b = m.logits(&perturbed, MaskMode::Bidirectional, None).unwrap();
            assert_ne!(
                &a.data()[t * 64..(t + 1) * 64],
                &b.data()[t * 64..(t + 1) * 64]
            );
        }
    }

    #[test]
    fn padding_hides_padded_keys() {
        let m = TransformerLM::new(config()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let tokens = random_tokens(&mut rng, 1, 6, 64);
        let mut other = tokens.clone();
        other.set(0, 5, (tokens.get(0, 5) + 1) % 64);
        let pad = Grid::new(1, 6, vec![false, false, false, false, false, true]).unwrap();
        let a = m
            .logits(&tokens, MaskMode::Bidirectional, Some(&pad))
            .unwrap();
        let b = m
            .logits(&other, MaskMode::Bidirectional, Some(&pad))
            .unwrap();
        assert_eq!(&a.data()[..5 * 64], &b.data()[..5 * 64]);
    }

    #[test]
    fn forward_is_deterministic_and_mode_shares_parameters() {
        let m = TransformerLM::new(config()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let tokens = random_tokens(&mut rng, 2, 8, 64);
        assert_eq!(
            m.logits(&tokens, MaskMode::Causal, None).unwrap(),
            m.logits(&tokens, MaskMode::Causal, None).unwrap()
        );
        let mut tape = Tape::new();
        let c = m
            .forward(&mut tape, &tokens, MaskMode::Causal, None)
            .unwrap();
        let b = m
            .forward(&mut tape, &tokens, MaskMode::Bidirectional, None)
            .unwrap();
        assert_eq!(c.params.len(), m.params().len());
        assert_eq!(c.params.len(), b.params.len());
        for (x, y) in c.params.iter().zip(&b.params) {
            assert_eq!(tape.value(*x).data(), tape.value(*y).data());
        }
    }

    #[test]
    fn every_parameter_receives_gradient_in_both_modes() {
        for seed in 0..5 {
            let mut cfg = config();
            cfg.seed = seed;
            let m = TransformerLM::new(cfg).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let tokens = random_tokens(&mut rng, 2, 8, 64);
            let targets = random_tokens(&mut rng, 2, 8, 64);
            for mode in [MaskMode::Causal, MaskMode::Bidirectional] {
                let mut tape = Tape::new();
                let fwd = m.forward(&mut tape, &tokens, mode, None).unwrap();
                let loss = tape
                    .cross_entropy(fwd.logits, targets.data(), &[true; 16])
                    .unwrap();
                tape.backward(loss).unwrap();
                for (name, v) in m.param_names().iter().zip(&fwd.params) {
                    let g = tape.grad(*v).expect(name);
                    assert!(g.iter().any(|&x| x != 0.0), "{name} has zero gradient");
                }
            }
        }
    }

    #[test]
    fn full_model_gradients_match_finite_differences() {
        for seed in 0..3 {
            let cfg = ModelConfig {
                layers: 2,
                attention_heads: 2,
                hidden_size: 8,
                intermediate_size: 8,
                vocab_size: 11,
                max_seq_len: 5,
                position_buckets: 3,
                seed,
            };
            let m = TransformerLM::new(cfg).unwrap();
            let tokens = Grid::new(1, 5, vec![1, 5, 2, 6, 9]).unwrap();
            let targets = [5u32, 2, 6, 0, 3];
            for mode in [MaskMode::Causal, MaskMode::Bidirectional] {
                let check = check_gradients(m.params(), 1e-3, |tape, leaves| {
                    let logits = m.forward_bound(tape, leaves, &tokens, mode, None)?;
                    tape.cross_entropy(logits, &targets, &[true; 5])
                })
                .unwrap();
                assert!(
                    check.overall <= 1e-3,
                    "{mode:?} seed {seed}: {}",
                    check.overall
                );
            }
        }
    }
}

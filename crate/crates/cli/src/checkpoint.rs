//! Binary checkpoints.
//!
//! ```text
//! "ANTLM1" version:u8
//! section*   name_len:u32 name payload_len:u64 payload
//! ```
//!
//! Sections appear in a fixed order: `config`, `tokenizer`, `params`,
//! `optimizer`, `rng`, `cursor`. Integers and floats are little-endian.

use std::path::Path;

use antlm_core::data::Tokenizer;
use antlm_core::schedule::TrainState;
use antlm_core::{AdamW, AdamWConfig, Tensor, TransformerLM};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::CliError;

pub const MAGIC: &[u8; 6] = b"ANTLM1";
pub const VERSION: u8 = 1;
const SECTIONS: [&str; 6] = [
    "config",
    "tokenizer",
    "params",
    "optimizer",
    "rng",
    "cursor",
];

/// Where training stands, beyond what [`TrainState`] carries.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Cursor {
    /// Bytes of the metrics CSV written when the checkpoint was taken.
    pub metrics_len: u64,
    pub eval_len: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub tokenizer: Tokenizer,
    pub model: TransformerLM,
    pub state: Option<TrainState>,
    pub cursor: Cursor,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn bytes(&mut self, b: &[u8]) {
        self.u64(b.len() as u64);
        self.0.extend_from_slice(b);
    }
    fn f32s(&mut self, xs: &[f32]) {
        self.u64(xs.len() as u64);
        for x in xs {
            self.0.extend_from_slice(&x.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    at: usize,
}

fn corrupt(msg: impl Into<String>) -> CliError {
    CliError::Runtime(format!("corrupt checkpoint: {}", msg.into()))
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CliError> {
        let end = self
            .at
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| corrupt("truncated"))?;
        let s = &self.buf[self.at..end];
        self.at = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8, CliError> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32, CliError> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }
    fn u64(&mut self) -> Result<u64, CliError> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }
    fn f64(&mut self) -> Result<f64, CliError> {
        Ok(f64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }
    fn len(&mut self) -> Result<usize, CliError> {
        usize::try_from(self.u64()?).map_err(|_| corrupt("length overflow"))
    }
    fn bytes(&mut self) -> Result<&'a [u8], CliError> {
        let n = self.len()?;
        self.take(n)
    }
    fn string(&mut self) -> Result<String, CliError> {
        String::from_utf8(self.bytes()?.to_vec()).map_err(|_| corrupt("invalid UTF-8"))
    }
    fn f32s(&mut self) -> Result<Vec<f32>, CliError> {
        let n = self.len()?;
        let raw = self.take(n.checked_mul(4).ok_or_else(|| corrupt("length overflow"))?)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect())
    }
    fn done(&self) -> Result<(), CliError> {
        if self.at == self.buf.len() {
            Ok(())
        } else {
            Err(corrupt("trailing bytes"))
        }
    }
}

fn encode_params(model: &TransformerLM) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.u32(model.params().len() as u32);
    for (name, p) in model.param_names().iter().zip(model.params()) {
        w.bytes(name.as_bytes());
        w.u32(p.shape().len() as u32);
        for &d in p.shape() {
            w.u64(d as u64);
        }
        w.f32s(p.data());
    }
    w.0
}

fn encode_optimizer(state: Option<&TrainState>) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    let Some(state) = state else {
        w.u8(0);
        return w.0;
    };
    w.u8(1);
    let opt = &state.optimizer;
    let c = opt.config();
    for x in [c.beta1, c.beta2, c.eps, c.weight_decay] {
        w.f64(x);
    }
    match c.grad_clip_norm {
        Some(v) => {
            w.u8(1);
            w.f64(v);
        }
        None => w.u8(0),
    }
    w.u64(opt.steps_taken());
    w.u32(opt.first_moments().len() as u32);
    for (m, v) in opt.first_moments().iter().zip(opt.second_moments()) {
        w.f32s(m);
        w.f32s(v);
    }
    w.0
}

fn encode_rng(state: Option<&TrainState>) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    if let Some(s) = state {
        w.u8(1);
        w.0.extend_from_slice(&s.rng.get_seed());
        w.u64(s.rng.get_stream());
        w.0.extend_from_slice(&s.rng.get_word_pos().to_le_bytes());
    } else {
        w.u8(0);
    }
    w.0
}

fn encode_cursor(state: Option<&TrainState>, cursor: Cursor) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    let (epoch, step, clm, mlm) = state.map_or((0, 0, 0, 0), |s| {
        (s.epoch as u64, s.step, s.clm_steps, s.mlm_steps)
    });
    for v in [epoch, step, clm, mlm, cursor.metrics_len, cursor.eval_len] {
        w.u64(v);
    }
    w.0
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer(MAGIC.to_vec());
        w.u8(VERSION);
        let state = self.state.as_ref();
        let payloads = [
            self.config.to_text().into_bytes(),
            self.tokenizer.to_text().into_bytes(),
            encode_params(&self.model),
            encode_optimizer(state),
            encode_rng(state),
            encode_cursor(state, self.cursor),
        ];
        for (name, payload) in SECTIONS.iter().zip(payloads) {
            w.u32(name.len() as u32);
            w.0.extend_from_slice(name.as_bytes());
            w.bytes(&payload);
        }
        w.0
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self, CliError> {
        if buf.len() < 7 || &buf[..6] != MAGIC {
            return Err(corrupt("bad magic"));
        }
        if buf[6] != VERSION {
            return Err(corrupt(format!("unsupported version {}", buf[6])));
        }
        let mut r = Reader { buf, at: 7 };
        let mut sections = Vec::new();
        for expected in SECTIONS {
            let n = r.u32()? as usize;
            let name = r.take(n)?;
            if name != expected.as_bytes() {
                return Err(corrupt(format!("expected section {expected}")));
            }
            sections.push(r.bytes()?);
        }
        r.done()?;

        let config_text =
            std::str::from_utf8(sections[0]).map_err(|_| corrupt("config is not UTF-8"))?;
        let config = RunConfig::parse(config_text, Path::new(""))?;
        let tok_text =
            std::str::from_utf8(sections[1]).map_err(|_| corrupt("tokenizer is not UTF-8"))?;
        let tokenizer = Tokenizer::from_text(tok_text).map_err(|e| corrupt(e.to_string()))?;

        let mut r = Reader {
            buf: sections[2],
            at: 0,
        };
        let count = r.u32()? as usize;
        let mut named = Vec::with_capacity(count);
        for _ in 0..count {
            let name = r.string()?;
            let ndim = r.u32()? as usize;
            let shape = (0..ndim).map(|_| r.len()).collect::<Result<Vec<_>, _>>()?;
            let data = r.f32s()?;
            named.push((
                name,
                Tensor::new(shape, data).map_err(|e| corrupt(e.to_string()))?,
            ));
        }
        r.done()?;
        let model = TransformerLM::from_params(config.model_config(tokenizer.vocab_size()), named)
            .map_err(|e| corrupt(e.to_string()))?;

        let mut r = Reader {
            buf: sections[3],
            at: 0,
        };
        let optimizer = if r.u8()? == 1 {
            let (beta1, beta2, eps, weight_decay) = (r.f64()?, r.f64()?, r.f64()?, r.f64()?);
            let grad_clip_norm = if r.u8()? == 1 { Some(r.f64()?) } else { None };
            let config = AdamWConfig {
                beta1,
                beta2,
                eps,
                weight_decay,
                grad_clip_norm,
            };
            let step = r.u64()?;
            let n = r.u32()? as usize;
            let (mut m, mut v) = (Vec::with_capacity(n), Vec::with_capacity(n));
            for _ in 0..n {
                m.push(r.f32s()?);
                v.push(r.f32s()?);
            }
            Some(AdamW::from_state(config, step, m, v).map_err(|e| corrupt(e.to_string()))?)
        } else {
            None
        };
        r.done()?;

        let mut r = Reader {
            buf: sections[4],
            at: 0,
        };
        let rng = if r.u8()? == 1 {
            let seed: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
            let stream = r.u64()?;
            let word_pos = u128::from_le_bytes(r.take(16)?.try_into().expect("16 bytes"));
            let mut rng = ChaCha8Rng::from_seed(seed);
            rng.set_stream(stream);
            rng.set_word_pos(word_pos);
            Some(rng)
        } else {
            None
        };
        r.done()?;

        let mut r = Reader {
            buf: sections[5],
            at: 0,
        };
        let (epoch, step, clm_steps, mlm_steps) = (r.len()?, r.u64()?, r.u64()?, r.u64()?);
        let cursor = Cursor {
            metrics_len: r.u64()?,
            eval_len: r.u64()?,
        };
        r.done()?;

        let state = match (optimizer, rng) {
            (Some(optimizer), Some(rng)) => Some(TrainState {
                epoch,
                step,
                clm_steps,
                mlm_steps,
                optimizer,
                rng,
            }),
            (None, None) => None,
            _ => return Err(corrupt("optimizer and rng sections disagree")),
        };
        Ok(Self {
            config,
            tokenizer,
            model,
            state,
            cursor,
        })
    }

    /// Writes through a temporary file and a rename so a reader never sees a
    /// partial checkpoint.
    pub fn save(&self, path: &Path) -> Result<(), CliError> {
        let tmp = path.with_extension("ckpt.tmp");
        std::fs::write(&tmp, self.to_bytes()).map_err(|e| CliError::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use antlm_core::data::train_bpe;
    use antlm_core::objectives::VocabView;
    use antlm_core::schedule::TrainState;
    use rand_chacha::rand_core::RngCore;

    fn sample() -> Checkpoint {
        let tokenizer = train_bpe(&["the cat sat on the mat", "a dog ran"], 40).unwrap();
        let config = RunConfig {
            vocab_size: 40,
            ..RunConfig::default()
        };
        let model = TransformerLM::new(config.model_config(tokenizer.vocab_size())).unwrap();
        let tc = config
            .trainer_config(VocabView::standard(tokenizer.vocab_size()))
            .unwrap();
        let mut state = TrainState::new(&tc, &model);
        state.rng.next_u64();
        state.epoch = 3;
        Checkpoint {
            config,
            tokenizer,
            model,
            state: Some(state),
            cursor: Cursor {
                metrics_len: 123,
                eval_len: 7,
            },
        }
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let ck = sample();
        let a = ck.to_bytes();
        let back = Checkpoint::from_bytes(&a).unwrap();
        assert_eq!(back.to_bytes(), a);
        assert_eq!(back.model.params(), ck.model.params());
        assert_eq!(back.state, ck.state);
    }

    #[test]
    fn rejects_damage() {
        let a = sample().to_bytes();
        assert!(Checkpoint::from_bytes(&a[..a.len() - 1]).is_err());
        let mut b = a.clone();
        b[0] = b'X';
        assert!(Checkpoint::from_bytes(&b).is_err());
        let mut c = a;
        c[6] = 9;
        assert!(Checkpoint::from_bytes(&c).is_err());
    }

    #[test]
    fn model_only_checkpoint_round_trips() {
        let mut ck = sample();
        ck.state = None;
        let a = ck.to_bytes();
        assert_eq!(Checkpoint::from_bytes(&a).unwrap().to_bytes(), a);
    }
}

//! Flat `section.key = value` run configuration.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use antlm_core::eval::ScoringMode;
use antlm_core::schedule::{parse_schedule, LrTimeline, ObjectiveSettings, TrainerConfig};
use antlm_core::{
    AdamWConfig, LrScheduleKind, LrScheduleSpec, MaskingPolicy, MaskingStrategy, ModelConfig,
    Objective,
};

use crate::CliError;

/// Which scorer runs when the trainer evaluates minimal pairs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EvalScoring {
    /// The scorer of the objective that just finished.
    Matching,
    Clm,
    Pll,
    Both,
}

impl EvalScoring {
    pub fn name(self) -> &'static str {
        match self {
            Self::Matching => "matching",
            Self::Clm => "clm",
            Self::Pll => "pll",
            Self::Both => "both",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "matching" => Some(Self::Matching),
            "clm" => Some(Self::Clm),
            "pll" => Some(Self::Pll),
            "both" => Some(Self::Both),
            _ => None,
        }
    }

    /// Scorers to run after a phase of `objective`.
    pub fn modes(self, objective: Objective) -> Vec<ScoringMode> {
        match self {
            Self::Matching => vec![matching_scorer(objective)],
            Self::Clm => vec![ScoringMode::CausalLogProb],
            Self::Pll => vec![ScoringMode::PseudoLogLikelihood],
            Self::Both => vec![ScoringMode::CausalLogProb, ScoringMode::PseudoLogLikelihood],
        }
    }
}

pub fn matching_scorer(objective: Objective) -> ScoringMode {
    match objective {
        Objective::Clm => ScoringMode::CausalLogProb,
        Objective::Mlm => ScoringMode::PseudoLogLikelihood,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Paths {
    pub corpus: Vec<PathBuf>,
    pub tokenizer: Option<PathBuf>,
    pub out: PathBuf,
    pub eval_pairs: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    /// `vocab_size` and `seed` are filled in from the tokenizer and
    /// `seed` when a model is built.
    pub model: ModelConfig,
    pub masking: MaskingPolicy,
    pub schedule: String,
    pub clm: ObjectiveSettings,
    pub mlm: ObjectiveSettings,
    pub seq_len: usize,
    pub seed: u64,
    pub weight_decay: f64,
    pub grad_clip_norm: Option<f64>,
    pub lr_timeline: LrTimeline,
    pub vocab_size: usize,
    pub paths: Paths,
    /// Extra evaluation every this many epochs; 0 evaluates only at phase
    /// boundaries.
    pub eval_every: usize,
    pub eval_scoring: EvalScoring,
    pub log_every: u64,
    /// Record wall-clock columns. Off keeps metrics files reproducible.
    pub log_timing: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig {
                layers: 2,
                attention_heads: 2,
                hidden_size: 32,
                intermediate_size: 64,
                vocab_size: 0,
                max_seq_len: 32,
                position_buckets: 16,
                seed: 0,
            },
            masking: MaskingPolicy::default(),
            schedule: "1_CLM+1_MLM".into(),
            clm: ObjectiveSettings {
                lr: LrScheduleSpec::cosine(3e-3),
                batch_size: 16,
            },
            mlm: ObjectiveSettings {
                lr: LrScheduleSpec::restarts(3e-3, 4),
                batch_size: 16,
            },
            seq_len: 32,
            seed: 0,
            weight_decay: 0.01,
            grad_clip_norm: None,
            lr_timeline: LrTimeline::PerObjective,
            vocab_size: 256,
            paths: Paths {
                corpus: Vec::new(),
                tokenizer: None,
                out: PathBuf::from("runs/default"),
                eval_pairs: None,
            },
            eval_every: 0,
            eval_scoring: EvalScoring::Matching,
            log_every: 10,
            log_timing: false,
        }
    }
}

fn bad(line: usize, key: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("line {line}: {key}: {msg}"))
}

fn num<T: std::str::FromStr>(line: usize, key: &str, v: &str) -> Result<T, CliError> {
    v.parse()
        .map_err(|_| bad(line, key, format!("cannot parse {v:?}")))
}

fn flag(line: usize, key: &str, v: &str) -> Result<bool, CliError> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(bad(line, key, "expected true or false")),
    }
}

fn optional_path(v: &str, base: &Path) -> Option<PathBuf> {
    (!v.is_empty() && v != "none").then(|| base.join(v))
}

impl RunConfig {
    /// Reads a config file. Relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        Self::parse(&text, base)
    }

    pub fn parse(text: &str, base: &Path) -> Result<Self, CliError> {
        let mut seen = BTreeMap::new();
        let mut c = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("line {line}: expected `key = value`")))?;
            let (key, v) = (key.trim(), value.trim());
            if let Some(prev) = seen.insert(key.to_string(), line) {
                return Err(bad(line, key, format!("already set on line {prev}")));
            }
            c.set(line, key, v, base)?;
        }
        c.validate()?;
        Ok(c)
    }

    fn set(&mut self, line: usize, key: &str, v: &str, base: &Path) -> Result<(), CliError> {
        if let Some((section @ ("clm" | "mlm"), field)) = key.split_once('.') {
            let s = if section == "clm" {
                &mut self.clm
            } else {
                &mut self.mlm
            };
            match field {
                "base_lr" => s.lr.base_lr = num(line, key, v)?,
                "batch_size" => s.batch_size = num(line, key, v)?,
                "lr_schedule" => {
                    s.lr.kind = LrScheduleKind::parse(v)
                        .ok_or_else(|| bad(line, key, "expected cosine or cosine_restarts"))?
                }
                "num_cycles" => s.lr.num_cycles = num(line, key, v)?,
                "warmup_steps" => s.lr.warmup_steps = num(line, key, v)?,
                _ => return Err(bad(line, key, "unknown key")),
            }
            return Ok(());
        }
        match key {
            "model.layers" => self.model.layers = num(line, key, v)?,
            "model.attention_heads" => self.model.attention_heads = num(line, key, v)?,
            "model.hidden_size" => self.model.hidden_size = num(line, key, v)?,
            "model.intermediate_size" => self.model.intermediate_size = num(line, key, v)?,
            "model.max_seq_len" => self.model.max_seq_len = num(line, key, v)?,
            "model.position_buckets" => self.model.position_buckets = num(line, key, v)?,
            "masking.select_rate" => self.masking.select_rate = num(line, key, v)?,
            "masking.mask_frac" => self.masking.mask_frac = num(line, key, v)?,
            "masking.random_frac" => self.masking.random_frac = num(line, key, v)?,
            "masking.keep_frac" => self.masking.keep_frac = num(line, key, v)?,
            "masking.strategy" => {
                self.masking.strategy = MaskingStrategy::parse(v)
                    .ok_or_else(|| bad(line, key, "expected subword, whole_word or span"))?
            }
            "masking.span_geometric_p" => self.masking.span_geometric_p = num(line, key, v)?,
            "masking.span_max" => self.masking.span_max = num(line, key, v)?,
            "schedule" => self.schedule = v.to_string(),
            "train.seq_len" => self.seq_len = num(line, key, v)?,
            "train.seed" => self.seed = num(line, key, v)?,
            "train.weight_decay" => self.weight_decay = num(line, key, v)?,
            "train.grad_clip_norm" => {
                self.grad_clip_norm = if v == "none" {
                    None
                } else {
                    Some(num(line, key, v)?)
                }
            }
            "train.lr_timeline" => {
                self.lr_timeline = LrTimeline::parse(v)
                    .ok_or_else(|| bad(line, key, "expected per-objective or global"))?
            }
            "tokenizer.vocab_size" => self.vocab_size = num(line, key, v)?,
            "paths.corpus" => {
                self.paths.corpus = v
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| base.join(s))
                    .collect()
            }
            "paths.tokenizer" => self.paths.tokenizer = optional_path(v, base),
            "paths.out" => self.paths.out = base.join(v),
            "paths.eval_pairs" => self.paths.eval_pairs = optional_path(v, base),
            "eval.every" => self.eval_every = num(line, key, v)?,
            "eval.scoring" => {
                self.eval_scoring = EvalScoring::parse(v)
                    .ok_or_else(|| bad(line, key, "expected matching, clm, pll or both"))?
            }
            "log.every" => self.log_every = num(line, key, v)?,
            "log.timing" => self.log_timing = flag(line, key, v)?,
            _ => return Err(bad(line, key, "unknown key")),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), CliError> {
        parse_schedule(&self.schedule)?;
        let mut probe = self.model.clone();
        probe.vocab_size = self.vocab_size.max(1);
        probe.validate()?;
        if self.seq_len < 2 || self.seq_len > self.model.max_seq_len {
            return Err(CliError::Config(format!(
                "train.seq_len {} must lie in [2, model.max_seq_len = {}]",
                self.seq_len, self.model.max_seq_len
            )));
        }
        self.trainer_config(antlm_core::objectives::VocabView::standard(self.vocab_size))?
            .validate()?;
        Ok(())
    }

    pub fn model_config(&self, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            vocab_size,
            seed: self.seed,
            ..self.model.clone()
        }
    }

    pub fn trainer_config(
        &self,
        vocab: antlm_core::objectives::VocabView,
    ) -> Result<TrainerConfig, CliError> {
        Ok(TrainerConfig {
            schedule: parse_schedule(&self.schedule)?,
            clm: self.clm.clone(),
            mlm: self.mlm.clone(),
            optimizer: AdamWConfig {
                weight_decay: self.weight_decay,
                grad_clip_norm: self.grad_clip_norm,
                ..AdamWConfig::default()
            },
            masking: self.masking.clone(),
            vocab,
            lr_timeline: self.lr_timeline,
            // Keeps the shuffling stream distinct from parameter init.
            seed: self.seed ^ 0xA5A5_5A5A_0F0F_F0F0,
            log_every: self.log_every,
        })
    }

    /// Canonical text, every key in a fixed order. `paths.out` is left out
    /// so that identical runs written to different directories snapshot the
    /// same configuration.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let m = &self.model;
        let k = &self.masking;
        let path = |p: &Option<PathBuf>| {
            p.as_ref()
                .map_or("none".to_string(), |p| p.display().to_string())
        };
        let corpus: Vec<String> = self
            .paths
            .corpus
            .iter()
            .map(|p| p.display().to_string())
            .collect();
        let lines: Vec<(String, String)> = vec![
            ("model.layers".into(), m.layers.to_string()),
            (
                "model.attention_heads".into(),
                m.attention_heads.to_string(),
            ),
            ("model.hidden_size".into(), m.hidden_size.to_string()),
            (
                "model.intermediate_size".into(),
                m.intermediate_size.to_string(),
            ),
            ("model.max_seq_len".into(), m.max_seq_len.to_string()),
            (
                "model.position_buckets".into(),
                m.position_buckets.to_string(),
            ),
            ("masking.select_rate".into(), k.select_rate.to_string()),
            ("masking.mask_frac".into(), k.mask_frac.to_string()),
            ("masking.random_frac".into(), k.random_frac.to_string()),
            ("masking.keep_frac".into(), k.keep_frac.to_string()),
            ("masking.strategy".into(), k.strategy.name().into()),
            (
                "masking.span_geometric_p".into(),
                k.span_geometric_p.to_string(),
            ),
            ("masking.span_max".into(), k.span_max.to_string()),
            ("schedule".into(), self.schedule.clone()),
            ("train.seq_len".into(), self.seq_len.to_string()),
            ("train.seed".into(), self.seed.to_string()),
            ("train.weight_decay".into(), self.weight_decay.to_string()),
            (
                "train.grad_clip_norm".into(),
                self.grad_clip_norm.map_or("none".into(), |c| c.to_string()),
            ),
            ("train.lr_timeline".into(), self.lr_timeline.name().into()),
            ("tokenizer.vocab_size".into(), self.vocab_size.to_string()),
            ("paths.corpus".into(), corpus.join(",")),
            ("paths.tokenizer".into(), path(&self.paths.tokenizer)),
            ("paths.eval_pairs".into(), path(&self.paths.eval_pairs)),
            ("eval.every".into(), self.eval_every.to_string()),
            ("eval.scoring".into(), self.eval_scoring.name().into()),
            ("log.every".into(), self.log_every.to_string()),
            ("log.timing".into(), self.log_timing.to_string()),
        ];
        for (key, v) in lines {
            let _ = writeln!(s, "{key} = {v}");
        }
        for (name, o) in [("clm", &self.clm), ("mlm", &self.mlm)] {
            let _ = writeln!(s, "{name}.base_lr = {}", o.lr.base_lr);
            let _ = writeln!(s, "{name}.batch_size = {}", o.batch_size);
            let _ = writeln!(s, "{name}.lr_schedule = {}", o.lr.kind.name());
            let _ = writeln!(s, "{name}.num_cycles = {}", o.lr.num_cycles);
            let _ = writeln!(s, "{name}.warmup_steps = {}", o.lr.warmup_steps);
        }
        s
    }
}

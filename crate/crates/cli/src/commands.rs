use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use antlm_core::data::synthetic::{generate_corpus, generate_pairs, GrammarConfig};
use antlm_core::data::{
    decode_utf8, documents, pack_sequences, train_bpe, Preprocessor, Tokenizer,
};
use antlm_core::eval::{
    format_pairs, minimal_pair_accuracy, parse_pairs, EvalReport, MinimalPair, ScoringMode,
};
use antlm_core::schedule::{
    parse_schedule, run_training, EpochRecord, StepRecord, TrainObserver, TrainState,
};
use antlm_core::{Objective, TransformerLM};

use crate::checkpoint::{Checkpoint, Cursor};
use crate::config::{matching_scorer, RunConfig};
use crate::metrics::{CsvLog, MetricsRow, EVAL_LOG_HEADER, METRICS_HEADER};
use crate::CliError;

/// Exit code of a run stopped by `--stop-after-steps`.
pub const STOPPED_EXIT_CODE: i32 = 3;
/// Largest tolerated share of malformed lines in a pair file.
pub const MAX_MALFORMED_FRACTION: f64 = 0.05;

pub const METRICS_FILE: &str = "metrics.csv";
pub const EVAL_LOG_FILE: &str = "eval_log.csv";
pub const LATEST: &str = "latest.ckpt";
pub const FINAL: &str = "final.ckpt";

pub fn phase_checkpoint_name(phase_index: usize) -> String {
    format!("phase-{}.ckpt", phase_index + 1)
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

fn objective_tag(o: Objective) -> &'static str {
    match o {
        Objective::Clm => "CLM",
        Objective::Mlm => "MLM",
    }
}

/// Cleans every corpus file with shared deduplication and splits the result
/// into documents.
pub fn read_corpus(paths: &[PathBuf]) -> Result<Vec<String>, CliError> {
    if paths.is_empty() {
        return Err(CliError::Config("paths.corpus is empty".into()));
    }
    let mut pre = Preprocessor::new();
    for p in paths {
        let bytes = fs::read(p).map_err(|e| CliError::io(p, e))?;
        let text =
            decode_utf8(&bytes).map_err(|e| CliError::Runtime(format!("{}: {e}", p.display())))?;
        pre.push(text);
    }
    Ok(documents(&pre.finish()))
}

pub fn tokenizer_train(
    corpus: &[PathBuf],
    vocab_size: usize,
    out: &Path,
) -> Result<Tokenizer, CliError> {
    let docs = read_corpus(corpus)?;
    let tokenizer = train_bpe(&docs, vocab_size)?;
    write_file(out, &tokenizer.to_text())?;
    Ok(tokenizer)
}

pub fn load_tokenizer(path: &Path) -> Result<Tokenizer, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    Ok(Tokenizer::from_text(&text)?)
}

/// Loads `paths.tokenizer`, or trains one on the corpus and writes it into
/// the run directory when no tokenizer is configured.
fn resolve_tokenizer(config: &RunConfig, docs: &[String]) -> Result<Tokenizer, CliError> {
    match &config.paths.tokenizer {
        Some(p) if p.exists() => load_tokenizer(p),
        Some(p) => Err(CliError::Config(format!(
            "tokenizer {} does not exist; run `antlm tokenizer-train` first",
            p.display()
        ))),
        None => {
            let tokenizer = train_bpe(docs, config.vocab_size)?;
            write_file(
                &config.paths.out.join("tokenizer.txt"),
                &tokenizer.to_text(),
            )?;
            Ok(tokenizer)
        }
    }
}

/// Reads a pair file, reporting malformed lines on stderr and refusing
/// files where more than [`MAX_MALFORMED_FRACTION`] of lines are malformed.
pub fn load_pairs(path: &Path) -> Result<Vec<MinimalPair>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let (pairs, malformed) = parse_pairs(&text);
    for m in &malformed {
        eprintln!("{}:{}: {}", path.display(), m.line, m.message);
    }
    let total = pairs.len() + malformed.len();
    if total > 0 && malformed.len() as f64 > MAX_MALFORMED_FRACTION * total as f64 {
        return Err(CliError::Runtime(format!(
            "{}: {} of {total} pair lines are malformed (limit {}%)",
            path.display(),
            malformed.len(),
            MAX_MALFORMED_FRACTION * 100.0
        )));
    }
    if pairs.is_empty() {
        return Err(CliError::Runtime(format!(
            "{}: no minimal pairs",
            path.display()
        )));
    }
    Ok(pairs)
}

#[derive(Clone, Debug, Default)]
pub struct TrainOptions {
    pub resume: bool,
    /// Exit abruptly with [`STOPPED_EXIT_CODE`] once this many optimizer
    /// steps have been taken. Simulates a killed process.
    pub stop_after_steps: Option<u64>,
    pub verbose: bool,
}

pub struct TrainSummary {
    pub out: PathBuf,
    pub model: TransformerLM,
    pub tokenizer: Tokenizer,
    pub state: TrainState,
    pub final_objective: Objective,
}

struct RunObserver<'a> {
    config: &'a RunConfig,
    tokenizer: &'a Tokenizer,
    pairs: Option<&'a [MinimalPair]>,
    metrics: CsvLog,
    eval_log: CsvLog,
    phase_ended: bool,
    stop_after_steps: Option<u64>,
    verbose: bool,
    total_epochs: usize,
    start: Instant,
    last_step: Instant,
    tokens_since_row: usize,
}

impl RunObserver<'_> {
    /// Throughput since the previous step row, and elapsed time.
    fn timing(&mut self) -> (f64, u64) {
        let tokens = std::mem::take(&mut self.tokens_since_row);
        if !self.config.log_timing {
            return (0.0, 0);
        }
        let now = Instant::now();
        let dt = now.duration_since(self.last_step).as_secs_f64();
        self.last_step = now;
        let rate = if dt > 0.0 { tokens as f64 / dt } else { 0.0 };
        (rate, now.duration_since(self.start).as_millis() as u64)
    }

    fn row(&mut self, r: &EpochRecord, suffix: &str) -> Result<(), CliError> {
        let wall_ms = if self.config.log_timing {
            self.start.elapsed().as_millis() as u64
        } else {
            0
        };
        let row = MetricsRow {
            epoch: r.epoch,
            phase_index: r.phase_index,
            objective: format!("{}_{suffix}", objective_tag(r.objective)),
            step: r.step,
            lr: r.lr,
            loss: r.mean_loss,
            tokens_per_sec: 0.0,
            wall_ms,
        };
        self.metrics.append(&row.to_csv())
    }

    fn evaluate(&mut self, r: &EpochRecord, model: &TransformerLM) -> Result<(), CliError> {
        let Some(pairs) = self.pairs else {
            return Ok(());
        };
        for mode in self.config.eval_scoring.modes(r.objective) {
            let report = minimal_pair_accuracy(model, self.tokenizer, pairs, mode, false)?;
            let prefix = format!(
                "{},{},{},{}",
                r.epoch,
                r.phase_index,
                objective_tag(r.objective),
                mode.name()
            );
            let mut rows = String::new();
            for (name, c) in &report.per_phenomenon {
                let _ = writeln!(
                    rows,
                    "{prefix},{name},{},{},{}",
                    c.correct,
                    c.total,
                    c.accuracy()
                );
            }
            let correct: usize = report.per_phenomenon.values().map(|c| c.correct).sum();
            let _ = writeln!(
                rows,
                "{prefix},macro,{correct},{},{}",
                report.n_pairs(),
                report.macro_average()
            );
            self.eval_log.append(&rows)?;
            if self.verbose {
                println!(
                    "  eval {}: macro {:.4}",
                    mode.name(),
                    report.macro_average()
                );
            }
        }
        Ok(())
    }

    fn checkpoint(&self, model: &TransformerLM, state: &TrainState) -> Checkpoint {
        Checkpoint {
            config: self.config.clone(),
            tokenizer: self.tokenizer.clone(),
            model: model.clone(),
            state: Some(state.clone()),
            cursor: Cursor {
                metrics_len: self.metrics.len(),
                eval_len: self.eval_log.len(),
            },
        }
    }
}

impl TrainObserver for RunObserver<'_> {
    fn on_step(&mut self, r: &StepRecord) -> antlm_core::Result<()> {
        self.tokens_since_row += r.tokens;
        if r.log {
            let (tokens_per_sec, wall_ms) = self.timing();
            let row = MetricsRow {
                epoch: r.epoch,
                phase_index: r.phase_index,
                objective: objective_tag(r.objective).into(),
                step: r.step,
                lr: r.lr,
                loss: r.loss,
                tokens_per_sec,
                wall_ms,
            };
            self.metrics.append(&row.to_csv()).map_err(to_core)?;
        }
        if self.stop_after_steps.is_some_and(|n| r.step >= n) {
            std::process::exit(STOPPED_EXIT_CODE);
        }
        Ok(())
    }

    fn on_phase_end(
        &mut self,
        _: &EpochRecord,
        _: &TransformerLM,
        _: &TrainState,
    ) -> antlm_core::Result<()> {
        self.phase_ended = true;
        Ok(())
    }

    /// Writes this epoch's rows and evaluations, then the checkpoints, so a
    /// checkpoint's recorded log lengths cover everything up to it.
    fn on_epoch_end(
        &mut self,
        r: &EpochRecord,
        model: &TransformerLM,
        state: &TrainState,
    ) -> antlm_core::Result<()> {
        let phase_end = std::mem::take(&mut self.phase_ended);
        (|| {
            self.row(r, "epoch")?;
            if self.verbose {
                println!(
                    "epoch {}/{} {} loss {:.4} lr {:.3e}",
                    r.epoch + 1,
                    self.total_epochs,
                    objective_tag(r.objective),
                    r.mean_loss,
                    r.lr
                );
            }
            if phase_end {
                self.row(r, "end")?;
            }
            let every = self.config.eval_every;
            if phase_end || (every > 0 && (r.epoch + 1) % every == 0) {
                self.evaluate(r, model)?;
            }
            let ck = self.checkpoint(model, state);
            let out = &self.config.paths.out;
            if phase_end {
                ck.save(&out.join(phase_checkpoint_name(r.phase_index)))?;
            }
            ck.save(&out.join(LATEST))
        })()
        .map_err(to_core)
    }
}

fn to_core(e: CliError) -> antlm_core::Error {
    antlm_core::Error::Format {
        what: "run output",
        message: e.to_string(),
    }
}

fn from_core(e: antlm_core::Error) -> CliError {
    match e {
        antlm_core::Error::Format {
            what: "run output",
            message,
        } => CliError::Runtime(message),
        other => other.into(),
    }
}

/// Runs (or resumes) training as configured, writing metrics, phase
/// checkpoints, `latest.ckpt` and `final.ckpt` under `paths.out`.
pub fn train(config: &RunConfig, opts: &TrainOptions) -> Result<TrainSummary, CliError> {
    let out = config.paths.out.clone();
    fs::create_dir_all(&out).map_err(|e| CliError::io(&out, e))?;
    let metrics_path = out.join(METRICS_FILE);
    let eval_path = out.join(EVAL_LOG_FILE);

    let (config, tokenizer, mut model, mut state, docs, metrics, eval_log) = if opts.resume {
        let latest = out.join(LATEST);
        if !latest.exists() {
            return Err(CliError::Runtime(format!(
                "nothing to resume: {} not found",
                latest.display()
            )));
        }
        let ck = Checkpoint::load(&latest)?;
        let state = ck.state.ok_or_else(|| {
            CliError::Runtime(format!("{} holds no training state", latest.display()))
        })?;
        let mut cfg = ck.config;
        cfg.paths.out = out.clone();
        let docs = read_corpus(&cfg.paths.corpus)?;
        let metrics = CsvLog::resume(&metrics_path, ck.cursor.metrics_len)?;
        let eval_log = CsvLog::resume(&eval_path, ck.cursor.eval_len)?;
        (cfg, ck.tokenizer, ck.model, state, docs, metrics, eval_log)
    } else {
        config.validate()?;
        let docs = read_corpus(&config.paths.corpus)?;
        let tokenizer = resolve_tokenizer(config, &docs)?;
        let model = TransformerLM::new(config.model_config(tokenizer.vocab_size()))?;
        let state = TrainState::new(&config.trainer_config(tokenizer.vocab_view())?, &model);
        let metrics = CsvLog::create(&metrics_path, METRICS_HEADER)?;
        let eval_log = CsvLog::create(&eval_path, EVAL_LOG_HEADER)?;
        (
            config.clone(),
            tokenizer,
            model,
            state,
            docs,
            metrics,
            eval_log,
        )
    };

    let data = pack_sequences(&tokenizer.encode_documents(&docs), config.seq_len)?;
    if data.rows() == 0 {
        return Err(CliError::Config(format!(
            "corpus is shorter than one sequence of train.seq_len = {}",
            config.seq_len
        )));
    }
    let trainer = config.trainer_config(tokenizer.vocab_view())?;
    let pairs = config
        .paths
        .eval_pairs
        .as_deref()
        .map(load_pairs)
        .transpose()?;
    let schedule = parse_schedule(&config.schedule)?;
    let final_objective = schedule
        .phases()
        .last()
        .expect("nonempty schedule")
        .objective;
    if opts.verbose {
        println!(
            "training {} parameters on {} rows of {} tokens, schedule {}",
            model.count_parameters(),
            data.rows(),
            data.seq_len(),
            schedule
        );
    }

    let mut observer = RunObserver {
        config: &config,
        tokenizer: &tokenizer,
        pairs: pairs.as_deref(),
        metrics,
        eval_log,
        phase_ended: false,
        stop_after_steps: opts.stop_after_steps,
        verbose: opts.verbose,
        total_epochs: schedule.total_epochs(),
        start: Instant::now(),
        last_step: Instant::now(),
        tokens_since_row: 0,
    };
    let result = run_training(&mut model, &data, &trainer, &mut state, &mut observer);
    match result {
        Ok(()) => {}
        Err(
            e @ (antlm_core::Error::NonFiniteLoss { .. }
            | antlm_core::Error::PoisonedGradient { .. }),
        ) => {
            let slot =
                schedule.objective_for_epoch(state.epoch.min(schedule.total_epochs() - 1))?;
            let row = MetricsRow {
                epoch: state.epoch,
                phase_index: slot.phase_index,
                objective: format!("{}_abort", objective_tag(slot.objective)),
                step: state.step + 1,
                lr: 0.0,
                loss: f64::NAN,
                tokens_per_sec: 0.0,
                wall_ms: 0,
            };
            observer.metrics.append(&row.to_csv())?;
            return Err(CliError::Runtime(format!("training aborted: {e}")));
        }
        Err(e) => return Err(from_core(e)),
    }
    observer.checkpoint(&model, &state).save(&out.join(FINAL))?;
    Ok(TrainSummary {
        out,
        model,
        tokenizer,
        state,
        final_objective,
    })
}

/// One CSV row per phenomenon plus a `macro` row, for each report.
pub fn eval_csv(reports: &[EvalReport]) -> String {
    let mut s = String::from("scoring_mode,phenomenon,correct,total,accuracy\n");
    for r in reports {
        let mode = r.scoring_mode.name();
        for (name, c) in &r.per_phenomenon {
            let _ = writeln!(
                s,
                "{mode},{name},{},{},{}",
                c.correct,
                c.total,
                c.accuracy()
            );
        }
        let correct: usize = r.per_phenomenon.values().map(|c| c.correct).sum();
        let _ = writeln!(
            s,
            "{mode},macro,{correct},{},{}",
            r.n_pairs(),
            r.macro_average()
        );
    }
    s
}

/// Scores `pairs` with the model in `checkpoint` under each mode, prints the
/// tables and writes `eval.csv` into `out`.
pub fn eval(
    checkpoint: &Path,
    pairs: Option<&Path>,
    modes: &[ScoringMode],
    out: &Path,
    length_normalize: bool,
) -> Result<Vec<EvalReport>, CliError> {
    let ck = Checkpoint::load(checkpoint)?;
    let pairs_path = pairs
        .map(Path::to_path_buf)
        .or_else(|| ck.config.paths.eval_pairs.clone())
        .ok_or_else(|| {
            CliError::Config("no pair file given and none recorded in the checkpoint".into())
        })?;
    let pairs = load_pairs(&pairs_path)?;
    let mut reports = Vec::new();
    for &mode in modes {
        let report =
            minimal_pair_accuracy(&ck.model, &ck.tokenizer, &pairs, mode, length_normalize)?;
        print!("{}", report.table());
        reports.push(report);
    }
    write_file(&out.join("eval.csv"), &eval_csv(&reports))?;
    Ok(reports)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompareCell {
    pub seed: u64,
    pub clm: Option<f64>,
    pub pll: Option<f64>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompareRow {
    pub schedule: String,
    pub total_epochs: usize,
    /// Scorer matching the schedule's final phase; it fills the per-seed
    /// and `median` columns.
    pub headline: ScoringMode,
    pub cells: Vec<CompareCell>,
}

pub fn median(values: &[f64]) -> Option<f64> {
    let mut v: Vec<f64> = values.to_vec();
    v.sort_by(f64::total_cmp);
    match v.len() {
        0 => None,
        n if n % 2 == 1 => Some(v[n / 2]),
        n => Some((v[n / 2 - 1] + v[n / 2]) / 2.0),
    }
}

impl CompareRow {
    pub fn scores(&self, mode: ScoringMode) -> Vec<f64> {
        self.cells
            .iter()
            .filter_map(|c| match mode {
                ScoringMode::CausalLogProb => c.clm,
                ScoringMode::PseudoLogLikelihood => c.pll,
            })
            .collect()
    }

    pub fn median(&self) -> Option<f64> {
        median(&self.scores(self.headline))
    }

    pub fn failures(&self) -> usize {
        self.cells.iter().filter(|c| c.error.is_some()).count()
    }
}

fn cell_value(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| format!("{x:.6}"))
}

pub fn grid_csv(rows: &[CompareRow], seeds: &[u64]) -> String {
    let mut s = String::from("schedule,total_epochs,scoring");
    for seed in seeds {
        let _ = write!(s, ",seed_{seed}");
    }
    s.push_str(",median,clm_median,pll_median,failures\n");
    for r in rows {
        let _ = write!(s, "{},{},{}", r.schedule, r.total_epochs, r.headline.name());
        for c in &r.cells {
            let v = match r.headline {
                ScoringMode::CausalLogProb => c.clm,
                ScoringMode::PseudoLogLikelihood => c.pll,
            };
            let _ = write!(s, ",{}", cell_value(v));
        }
        let _ = writeln!(
            s,
            ",{},{},{},{}",
            cell_value(r.median()),
            cell_value(median(&r.scores(ScoringMode::CausalLogProb))),
            cell_value(median(&r.scores(ScoringMode::PseudoLogLikelihood))),
            r.failures()
        );
    }
    s
}

fn summary_table(rows: &[CompareRow]) -> String {
    let width = rows
        .iter()
        .map(|r| r.schedule.len())
        .max()
        .unwrap_or(0)
        .max(8);
    let mut s = format!(
        "{:<width$}  {:>6}  {:>7}  {:>8}  {:>8}  {:>8}  {:>8}\n",
        "schedule", "epochs", "scoring", "median", "clm", "pll", "failures"
    );
    let pct = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{:.2}", 100.0 * x));
    for r in rows {
        let _ = writeln!(
            s,
            "{:<width$}  {:>6}  {:>7}  {:>8}  {:>8}  {:>8}  {:>8}",
            r.schedule,
            r.total_epochs,
            r.headline.name(),
            pct(r.median()),
            pct(median(&r.scores(ScoringMode::CausalLogProb))),
            pct(median(&r.scores(ScoringMode::PseudoLogLikelihood))),
            r.failures()
        );
    }
    s
}

/// Trains one model per (schedule, seed) and scores each with both scorers.
/// A failed cell is recorded and the grid carries on. Writes `grid.csv` and
/// `cells.csv` into `out`.
pub fn compare(
    base: &RunConfig,
    schedules: &[String],
    seeds: &[u64],
    out: &Path,
    verbose: bool,
) -> Result<Vec<CompareRow>, CliError> {
    if schedules.is_empty() || seeds.is_empty() {
        return Err(CliError::Config(
            "compare needs at least one schedule and one seed".into(),
        ));
    }
    let parsed = schedules
        .iter()
        .map(|s| parse_schedule(s))
        .collect::<Result<Vec<_>, _>>()?;
    if schedules.len() < 2 {
        eprintln!("warning: a comparison normally contrasts at least two schedules");
    }
    if parsed
        .windows(2)
        .any(|w| w[0].total_epochs() != w[1].total_epochs())
    {
        let totals: Vec<String> = parsed
            .iter()
            .map(|p| format!("{p}={}", p.total_epochs()))
            .collect();
        eprintln!(
            "warning: schedules differ in total epochs ({})",
            totals.join(", ")
        );
    }
    let pairs_path = base
        .paths
        .eval_pairs
        .clone()
        .ok_or_else(|| CliError::Config("compare needs paths.eval_pairs".into()))?;
    let pairs = load_pairs(&pairs_path)?;
    base.validate()?;
    fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;

    // One tokenizer for the whole grid so every cell sees the same ids.
    let tokenizer_path = match &base.paths.tokenizer {
        Some(p) => p.clone(),
        None => {
            let p = out.join("tokenizer.txt");
            tokenizer_train(&base.paths.corpus, base.vocab_size, &p)?;
            p
        }
    };

    let mut rows = Vec::new();
    let mut cells_csv = String::from("schedule,seed,clm_macro,pll_macro,status\n");
    for (i, (text, schedule)) in schedules.iter().zip(&parsed).enumerate() {
        let headline = matching_scorer(
            schedule
                .phases()
                .last()
                .expect("nonempty schedule")
                .objective,
        );
        let mut cells = Vec::new();
        for &seed in seeds {
            let mut cfg = base.clone();
            cfg.schedule = schedule.to_string();
            cfg.seed = seed;
            cfg.paths.tokenizer = Some(tokenizer_path.clone());
            cfg.paths.eval_pairs = None;
            cfg.paths.out = out.join("cells").join(format!("s{}_seed{seed}", i + 1));
            if verbose {
                println!("[{}] {} seed {seed}", i + 1, schedule);
            }
            let result = train(&cfg, &TrainOptions::default()).and_then(|run| {
                let clm = minimal_pair_accuracy(
                    &run.model,
                    &run.tokenizer,
                    &pairs,
                    ScoringMode::CausalLogProb,
                    false,
                )?;
                let pll = minimal_pair_accuracy(
                    &run.model,
                    &run.tokenizer,
                    &pairs,
                    ScoringMode::PseudoLogLikelihood,
                    false,
                )?;
                Ok((clm.macro_average(), pll.macro_average()))
            });
            let cell = match result {
                Ok((clm, pll)) => CompareCell {
                    seed,
                    clm: Some(clm),
                    pll: Some(pll),
                    error: None,
                },
                Err(e) => {
                    eprintln!("run {} seed {seed} failed: {e}", schedule);
                    CompareCell {
                        seed,
                        clm: None,
                        pll: None,
                        error: Some(e.to_string()),
                    }
                }
            };
            let status = cell.error.as_deref().map_or("ok".to_string(), |e| {
                format!("failed: {}", e.replace(',', ";"))
            });
            let _ = writeln!(
                cells_csv,
                "{},{seed},{},{},{status}",
                schedule,
                cell_value(cell.clm),
                cell_value(cell.pll)
            );
            if verbose {
                println!(
                    "    clm {}  pll {}",
                    cell_value(cell.clm),
                    cell_value(cell.pll)
                );
            }
            cells.push(cell);
        }
        rows.push(CompareRow {
            schedule: text.trim().to_string(),
            total_epochs: schedule.total_epochs(),
            headline,
            cells,
        });
    }
    write_file(&out.join("grid.csv"), &grid_csv(&rows, seeds))?;
    write_file(&out.join("cells.csv"), &cells_csv)?;
    print!("{}", summary_table(&rows));
    Ok(rows)
}

/// Writes `corpus.txt` and `pairs.tsv` from the synthetic grammar.
pub fn synth(out: &Path, config: &GrammarConfig) -> Result<(), CliError> {
    write_file(&out.join("corpus.txt"), &generate_corpus(config))?;
    write_file(
        &out.join("pairs.tsv"),
        &format_pairs(&generate_pairs(config)),
    )
}

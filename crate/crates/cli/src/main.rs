use std::path::{Path, PathBuf};
use std::process::ExitCode;

use antlm_cli::commands::{self, TrainOptions};
use antlm_cli::config::RunConfig;
use antlm_cli::CliError;
use antlm_core::data::synthetic::GrammarConfig;
use antlm_core::eval::ScoringMode;
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(
    name = "antlm",
    version,
    about = "Alternating causal/masked language-model pretraining"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Scoring {
    Clm,
    Pll,
    Both,
}

impl Scoring {
    fn modes(self) -> Vec<ScoringMode> {
        match self {
            Self::Clm => vec![ScoringMode::CausalLogProb],
            Self::Pll => vec![ScoringMode::PseudoLogLikelihood],
            Self::Both => vec![ScoringMode::CausalLogProb, ScoringMode::PseudoLogLikelihood],
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train a BPE tokenizer on the corpus.
    TokenizerTrain {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Corpus files; overrides paths.corpus.
        #[arg(long = "corpus", num_args = 1..)]
        corpus: Vec<PathBuf>,
        #[arg(long)]
        vocab_size: Option<usize>,
        /// Tokenizer file to write; defaults to paths.tokenizer.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a model with a phase schedule.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        schedule: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        /// Run directory; overrides paths.out.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Continue from latest.ckpt in the run directory.
        #[arg(long)]
        resume: bool,
        #[arg(long, hide = true)]
        stop_after_steps: Option<u64>,
    },
    /// Score minimal pairs with a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Pair file; defaults to the one recorded in the checkpoint.
        #[arg(long)]
        pairs: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "both")]
        scoring: Scoring,
        /// Directory for eval.csv; defaults to the checkpoint's directory.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        length_normalize: bool,
    },
    /// Train and score a grid of schedules and seeds.
    Compare {
        #[arg(long)]
        config: PathBuf,
        /// Repeat once per schedule.
        #[arg(long = "schedule", required = true)]
        schedules: Vec<String>,
        /// Repeat once per seed.
        #[arg(long = "seed", default_values_t = [0u64, 1, 2])]
        seeds: Vec<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a synthetic grammar corpus and matching minimal pairs.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 100_000)]
        tokens: usize,
        #[arg(long, default_value_t = 100)]
        pairs_per_phenomenon: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn load_config(
    path: &Path,
    schedule: Option<String>,
    seed: Option<u64>,
    out: Option<PathBuf>,
) -> Result<RunConfig, CliError> {
    let mut config = RunConfig::load(path)?;
    if let Some(s) = schedule {
        config.schedule = s;
    }
    if let Some(s) = seed {
        config.seed = s;
    }
    if let Some(o) = out {
        config.paths.out = o;
    }
    config.validate()?;
    Ok(config)
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::TokenizerTrain {
            config,
            corpus,
            vocab_size,
            out,
        } => {
            let base = config
                .as_deref()
                .map(RunConfig::load)
                .transpose()?
                .unwrap_or_default();
            let corpus = if corpus.is_empty() {
                base.paths.corpus.clone()
            } else {
                corpus
            };
            let out = out.or(base.paths.tokenizer.clone()).ok_or_else(|| {
                CliError::Config("no output path: pass --out or set paths.tokenizer".into())
            })?;
            let tokenizer =
                commands::tokenizer_train(&corpus, vocab_size.unwrap_or(base.vocab_size), &out)?;
            println!(
                "wrote {} ({} tokens, {} merges)",
                out.display(),
                tokenizer.vocab_size(),
                tokenizer.merges().len()
            );
        }
        Command::Train {
            config,
            schedule,
            seed,
            out,
            resume,
            stop_after_steps,
        } => {
            let config = load_config(&config, schedule, seed, out)?;
            let opts = TrainOptions {
                resume,
                stop_after_steps,
                verbose: true,
            };
            let run = commands::train(&config, &opts)?;
            println!("wrote {}", run.out.join(commands::FINAL).display());
        }
        Command::Eval {
            checkpoint,
            pairs,
            scoring,
            out,
            length_normalize,
        } => {
            let out = out.unwrap_or_else(|| {
                checkpoint
                    .parent()
                    .map(Path::to_path_buf)
                    .unwrap_or_default()
            });
            commands::eval(
                &checkpoint,
                pairs.as_deref(),
                &scoring.modes(),
                &out,
                length_normalize,
            )?;
        }
        Command::Compare {
            config,
            schedules,
            seeds,
            out,
        } => {
            let config = load_config(&config, None, None, None)?;
            commands::compare(&config, &schedules, &seeds, &out, true)?;
        }
        Command::Synth {
            out,
            tokens,
            pairs_per_phenomenon,
            seed,
        } => {
            let cfg = GrammarConfig {
                target_tokens: tokens,
                pairs_per_phenomenon,
                seed,
            };
            commands::synth(&out, &cfg)?;
            println!(
                "wrote {} and {}",
                out.join("corpus.txt").display(),
                out.join("pairs.tsv").display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

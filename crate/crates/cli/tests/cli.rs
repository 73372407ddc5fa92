use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

const SMALL: &str = "\
model.layers = 1
model.attention_heads = 2
model.hidden_size = 16
model.intermediate_size = 32
model.max_seq_len = 32
model.position_buckets = 8
train.seq_len = 32
clm.batch_size = 8
mlm.batch_size = 8
tokenizer.vocab_size = 64
paths.corpus = corpus.txt
paths.eval_pairs = pairs.tsv
paths.out = run
log.every = 5
";

fn antlm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_antlm"))
        .args(args)
        .output()
        .unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Synthetic corpus, pairs and a small config in a fresh directory.
fn workspace(extra: &str) -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    let o = antlm(&[
        "synth",
        "--out",
        s(dir.path()),
        "--tokens",
        "3000",
        "--pairs-per-phenomenon",
        "2",
        "--seed",
        "4",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    fs::write(dir.path().join("run.cfg"), format!("{SMALL}{extra}")).unwrap();
    dir
}

#[test]
fn tokenizer_train_is_deterministic_and_loadable() {
    let dir = workspace("");
    let corpus = dir.path().join("corpus.txt");
    let a = dir.path().join("a.txt");
    let b = dir.path().join("b.txt");
    for out in [&a, &b] {
        let o = antlm(&[
            "tokenizer-train",
            "--corpus",
            s(&corpus),
            "--vocab-size",
            "80",
            "--out",
            s(out),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let tok = antlm_cli::commands::load_tokenizer(&a).unwrap();
    assert!(tok.vocab_size() <= 80);
    let text = "the boy waits .";
    assert_eq!(tok.decode(&tok.encode(text).ids), text);

    let o = antlm(&[
        "tokenizer-train",
        "--corpus",
        s(&corpus),
        "--vocab-size",
        "8",
        "--out",
        s(&a),
    ]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn train_writes_phase_checkpoints_and_boundary_rows() {
    let dir = workspace("");
    let cfg = dir.path().join("run.cfg");
    let o = antlm(&["train", "--config", s(&cfg), "--schedule", "1_CLM+1_MLM"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let run = dir.path().join("run");
    for f in [
        "phase-1.ckpt",
        "phase-2.ckpt",
        "final.ckpt",
        "latest.ckpt",
        "tokenizer.txt",
        "eval_log.csv",
    ] {
        assert!(run.join(f).exists(), "missing {f}");
    }
    let metrics = fs::read_to_string(run.join("metrics.csv")).unwrap();
    let mut lines = metrics.lines();
    assert_eq!(lines.next(), Some(antlm_cli::metrics::METRICS_HEADER));
    let objectives: Vec<&str> = lines.map(|l| l.split(',').nth(2).unwrap()).collect();
    assert!(objectives.contains(&"CLM"));
    assert!(objectives.contains(&"MLM"));
    let clm_end = objectives.iter().position(|o| *o == "CLM_end").unwrap();
    let mlm_end = objectives.iter().position(|o| *o == "MLM_end").unwrap();
    assert!(clm_end < mlm_end);
    assert_eq!(*objectives.last().unwrap(), "MLM_end");

    let eval_log = fs::read_to_string(run.join("eval_log.csv")).unwrap();
    assert!(eval_log.lines().any(|l| l.starts_with("0,0,CLM,clm,")));
    assert!(eval_log.lines().any(|l| l.starts_with("1,1,MLM,pll,")));
}

#[test]
fn eval_is_bounded_and_repeatable() {
    let dir = workspace("");
    let cfg = dir.path().join("run.cfg");
    let o = antlm(&["train", "--config", s(&cfg), "--schedule", "1_CLM"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let pairs: String = fs::read_to_string(dir.path().join("pairs.tsv"))
        .unwrap()
        .lines()
        .take(10)
        .map(|l| format!("{l}\n"))
        .collect();
    let pairs_path = dir.path().join("ten.tsv");
    fs::write(&pairs_path, pairs).unwrap();
    let ckpt = dir.path().join("run/final.ckpt");

    let mut outputs = Vec::new();
    for out in ["e1", "e2"] {
        let out = dir.path().join(out);
        let o = antlm(&[
            "eval",
            "--checkpoint",
            s(&ckpt),
            "--pairs",
            s(&pairs_path),
            "--out",
            s(&out),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        outputs.push(fs::read(out.join("eval.csv")).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);

    let text = String::from_utf8(outputs.remove(0)).unwrap();
    let mut modes = std::collections::BTreeSet::new();
    let mut macro_total = 0;
    for line in text.lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        modes.insert(cols[0].to_string());
        let correct: usize = cols[2].parse().unwrap();
        let total: usize = cols[3].parse().unwrap();
        let acc: f64 = cols[4].parse().unwrap();
        assert!(correct <= total);
        assert!((0.0..=1.0).contains(&acc));
        if cols[1] != "macro" {
            macro_total += total;
        }
    }
    assert_eq!(modes.into_iter().collect::<Vec<_>>(), ["clm", "pll"]);
    assert_eq!(macro_total, 20);
}

#[test]
fn compare_with_one_schedule_gives_one_row() {
    let dir = workspace("");
    let cfg = dir.path().join("run.cfg");
    let out = dir.path().join("grid");
    let o = antlm(&[
        "compare",
        "--config",
        s(&cfg),
        "--schedule",
        "1_MLM",
        "--out",
        s(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let grid = fs::read_to_string(out.join("grid.csv")).unwrap();
    let lines: Vec<&str> = grid.lines().collect();
    assert_eq!(lines.len(), 2, "{grid}");
    assert!(lines[0].contains("seed_0") && lines[0].contains("seed_2"));
    assert!(lines[1].starts_with("1_MLM,1,pll,"));
    assert!(lines[1].ends_with(",0"));
}

#[test]
fn diverging_run_aborts_with_a_row() {
    let dir = workspace("clm.base_lr = 1e30\n");
    let cfg = dir.path().join("run.cfg");
    let o = antlm(&["train", "--config", s(&cfg), "--schedule", "2_CLM"]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    let metrics = fs::read_to_string(dir.path().join("run/metrics.csv")).unwrap();
    let last = metrics.lines().last().unwrap();
    assert!(last.contains(",CLM_abort,"), "{last}");
    assert!(!dir.path().join("run/final.ckpt").exists());
}

#[test]
fn malformed_pair_files_are_rejected() {
    let dir = workspace("");
    let cfg = dir.path().join("run.cfg");
    let o = antlm(&["train", "--config", s(&cfg), "--schedule", "1_CLM"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let bad = dir.path().join("bad.tsv");
    fs::write(&bad, "agr\tthe boy waits .\tthe boy wait .\nno tabs here\n").unwrap();
    let ckpt = dir.path().join("run/final.ckpt");
    let o = antlm(&["eval", "--checkpoint", s(&ckpt), "--pairs", s(&bad)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains(":2:"), "{}", stderr(&o));
}

#[test]
fn config_errors_exit_with_two() {
    let dir = workspace("model.depth = 3\n");
    let cfg = dir.path().join("run.cfg");
    let o = antlm(&["train", "--config", s(&cfg)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("model.depth"), "{}", stderr(&o));

    let dir = workspace("");
    let cfg = dir.path().join("run.cfg");
    let o = antlm(&["train", "--config", s(&cfg), "--schedule", "2_XLM"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn resume_without_checkpoint_fails() {
    let dir = workspace("");
    let cfg = dir.path().join("run.cfg");
    let o = antlm(&["train", "--config", s(&cfg), "--resume"]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
}

#[test]
fn presets_parse_and_validate() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("presets");
    for name in ["desk.cfg", "babyllama.cfg", "ltgbert.cfg"] {
        let cfg = antlm_cli::config::RunConfig::load(&dir.join(name)).unwrap();
        cfg.validate().unwrap();
        cfg.trainer_config(antlm_core::objectives::VocabView::standard(cfg.vocab_size))
            .unwrap();
    }
}

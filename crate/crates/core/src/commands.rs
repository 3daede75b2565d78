//! The `train`, `eval` and `compare` commands behind the binary.

use std::path::{Path, PathBuf};

use serde_json::json;

use crate::checkpoint::Archive;
use crate::config::RunConfig;
use crate::corpus::make_batches;
use crate::error::{Error, Result};
use crate::report::{self, fmt_sig9, ComparisonReport, RunInfo, RunSummary};
use crate::tensor::Parameters;
use crate::trainer::{self, evaluate, load_corpus, TrainOutcome};

/// File name of the resolved configuration echoed into each run directory.
pub const CONFIG_ECHO: &str = "config.txt";

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Trains per `config` and writes every artifact into `config.out_dir`.
pub fn cmd_train(config: &RunConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let corpus = load_corpus(config)?;
    let dir = &config.out_dir;
    create_dir(dir)?;
    let echo = dir.join(CONFIG_ECHO);
    std::fs::write(&echo, config.to_text()).map_err(|e| Error::io(&echo, e))?;
    let vocab_path = dir.join("vocab.txt");
    std::fs::write(&vocab_path, corpus.vocab.to_text()).map_err(|e| Error::io(&vocab_path, e))?;

    println!(
        "mode {} | vocab {} | train {} tokens | valid {} tokens",
        config.mode,
        corpus.vocab.len(),
        corpus.train.len(),
        corpus.valid.len()
    );
    let outcome = trainer::train(config, &corpus, Some(dir), |e| {
        println!(
            "epoch {:>3} | train loss {:.4} | val loss {:.4} | val ppl {:.2} | mean lambda {}",
            e.epoch,
            e.train_loss,
            e.val_loss,
            e.val_ppl,
            e.mean_lambda.map_or_else(|| "-".to_string(), |l| format!("{l:.4}")),
        );
    })?;
    let info = RunInfo {
        mode: config.mode.to_string(),
        seed: config.seed,
        vocab_size: outcome.vocab_size,
        param_count: config.model_config(outcome.vocab_size).param_count(),
        wall_seconds: outcome.wall_seconds,
    };
    report::write_metrics(dir, &outcome.history, &info)?;
    Ok(outcome)
}

/// Validation loss and perplexity of the student stored in `checkpoint`.
/// Writes `eval.json` next to the checkpoint.
pub fn cmd_eval(checkpoint: &Path, config: &RunConfig) -> Result<(f64, f64)> {
    config.validate()?;
    let archive = Archive::load(checkpoint)?;
    let corpus = load_corpus(config)?;
    let model = config.model_config(corpus.vocab.len());
    let student = trainer::load_student(&archive, &model)?;
    let batches = make_batches(&corpus.valid, config.batch_size, config.seq_len)?;
    let (loss, ppl) = evaluate(&student, &batches)?;
    println!("val loss {loss:.6} | val ppl {ppl:.4}");
    let out = checkpoint.parent().map_or_else(|| PathBuf::from("eval.json"), |d| d.join("eval.json"));
    let num = |x: f64| fmt_sig9(x).parse::<f64>().ok();
    report::write_json(
        &out,
        &json!({
            "checkpoint": checkpoint.display().to_string(),
            "val_loss": num(loss),
            "val_ppl": num(ppl),
            "tokens": batches.iter().map(|b| b.n_tokens()).sum::<usize>(),
            "param_count": student.param_count(),
        }),
    )?;
    Ok((loss, ppl))
}

/// Compares two run directories and writes `compare.json` into `out_dir`.
pub fn cmd_compare(baseline_dir: &Path, l2t_dir: &Path, out_dir: &Path) -> Result<ComparisonReport> {
    let report = ComparisonReport::new(RunSummary::load(baseline_dir)?, RunSummary::load(l2t_dir)?);
    print!("{}", report.table());
    let value = serde_json::to_value(&report).map_err(|e| Error::Report(e.to_string()))?;
    create_dir(out_dir)?;
    report::write_json(&out_dir.join("compare.json"), &value)?;
    Ok(report)
}

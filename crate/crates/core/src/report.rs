//! Metric export (CSV and JSON) and the baseline-versus-L2T comparison.
//!
//! Every float is printed with 9 significant digits. JSON numbers are the
//! printed CSV values parsed back, so both files agree exactly. Missing
//! values (λ in baseline runs, teacher loss before activation) are empty
//! CSV cells and JSON `null`.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::trainer::{EpochMetrics, StepMetrics, TrainingHistory};

pub const EPOCH_COLUMNS: [&str; 8] = [
    "epoch",
    "train_loss",
    "val_loss",
    "val_ppl",
    "mean_lambda",
    "teacher_huber",
    "lr_student",
    "seconds",
];

pub const STEP_COLUMNS: [&str; 6] = ["step", "loss", "ce", "l2", "lambda", "grad_norm_student"];

/// `x` with 9 significant digits, in the style of C's `%.9g`.
pub fn fmt_sig9(x: f64) -> String {
    if !x.is_finite() {
        return if x.is_nan() { "nan".into() } else if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{x:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("exponent digits");
    let negative = mantissa.starts_with('-');
    let digits: String = mantissa.chars().filter(char::is_ascii_digit).collect();
    let mut out = String::new();
    if negative {
        out.push('-');
    }
    if (-4..9).contains(&exp) {
        if exp >= 0 {
            let int_len = exp as usize + 1;
            out.push_str(&digits[..int_len]);
            let frac = digits[int_len..].trim_end_matches('0');
            if !frac.is_empty() {
                out.push('.');
                out.push_str(frac);
            }
        } else {
            out.push_str("0.");
            out.push_str(&"0".repeat((-exp - 1) as usize));
            out.push_str(digits.trim_end_matches('0'));
        }
    } else {
        let frac = digits[1..].trim_end_matches('0');
        out.push_str(&digits[..1]);
        if !frac.is_empty() {
            out.push('.');
            out.push_str(frac);
        }
        let _ = write!(out, "e{}{:02}", if exp < 0 { '-' } else { '+' }, exp.abs());
    }
    out
}

fn cell(x: Option<f64>) -> String {
    x.map(fmt_sig9).unwrap_or_default()
}

fn num(text: &str) -> Value {
    serde_json::from_str(text).unwrap_or(Value::Null)
}

fn epoch_cells(e: &EpochMetrics) -> Vec<String> {
    vec![
        e.epoch.to_string(),
        fmt_sig9(e.train_loss),
        fmt_sig9(e.val_loss),
        fmt_sig9(e.val_ppl),
        cell(e.mean_lambda),
        cell(e.teacher_huber),
        fmt_sig9(e.lr_student),
        fmt_sig9(e.seconds),
    ]
}

fn step_cells(s: &StepMetrics) -> Vec<String> {
    vec![
        s.step.to_string(),
        fmt_sig9(s.loss),
        fmt_sig9(s.ce),
        fmt_sig9(s.l2),
        cell(s.lambda),
        fmt_sig9(s.grad_norm_student),
    ]
}

fn csv(columns: &[&str], rows: impl Iterator<Item = Vec<String>>) -> String {
    let mut out = columns.join(",");
    out.push('\n');
    for row in rows {
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

fn json_rows(columns: &[&str], rows: impl Iterator<Item = Vec<String>>) -> Value {
    Value::Array(
        rows.map(|cells| {
            Value::Object(
                columns
                    .iter()
                    .zip(&cells)
                    .map(|(c, v)| (c.to_string(), num(v)))
                    .collect(),
            )
        })
        .collect(),
    )
}

pub fn epoch_csv(history: &TrainingHistory) -> String {
    csv(&EPOCH_COLUMNS, history.epochs.iter().map(epoch_cells))
}

pub fn step_csv(history: &TrainingHistory) -> String {
    csv(&STEP_COLUMNS, history.steps.iter().map(step_cells))
}

/// Run-level information stored next to the histories in `metrics.json`.
#[derive(Clone, Debug)]
pub struct RunInfo {
    pub mode: String,
    pub seed: u64,
    pub vocab_size: usize,
    pub param_count: usize,
    pub wall_seconds: f64,
}

pub fn metrics_json(history: &TrainingHistory, info: &RunInfo) -> Value {
    let best = history.best_epoch().map(epoch_cells);
    let field = |i: usize| best.as_ref().map_or(Value::Null, |c| num(&c[i]));
    let final_train = history.epochs.last().map_or(Value::Null, |e| num(&fmt_sig9(e.train_loss)));
    json!({
        "mode": info.mode,
        "seed": info.seed,
        "vocab_size": info.vocab_size,
        "param_count": info.param_count,
        "best_epoch": field(0),
        "best_val_loss": field(2),
        "best_val_ppl": field(3),
        "final_train_loss": final_train,
        "wall_seconds": num(&fmt_sig9(info.wall_seconds)),
        "epochs": json_rows(&EPOCH_COLUMNS, history.epochs.iter().map(epoch_cells)),
        "steps": json_rows(&STEP_COLUMNS, history.steps.iter().map(step_cells)),
    })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_json(path: &Path, value: &Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Report(e.to_string()))?;
    text.push('\n');
    write_text(path, &text)
}

/// Writes `metrics_epoch.csv`, `metrics_step.csv` and `metrics.json` into `dir`.
pub fn write_metrics(dir: &Path, history: &TrainingHistory, info: &RunInfo) -> Result<()> {
    write_text(&dir.join("metrics_epoch.csv"), &epoch_csv(history))?;
    write_text(&dir.join("metrics_step.csv"), &step_csv(history))?;
    write_json(&dir.join("metrics.json"), &metrics_json(history, info))
}

/// Headline numbers of one finished run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub mode: String,
    pub best_val_ppl: f64,
    pub best_val_loss: f64,
    pub best_epoch: u64,
    pub final_train_loss: f64,
    pub wall_seconds: f64,
}

impl RunSummary {
    pub fn from_metrics(value: &Value) -> Result<Self> {
        let f = |key: &str| {
            value
                .get(key)
                .and_then(Value::as_f64)
                .ok_or_else(|| Error::Report(format!("metrics.json lacks numeric `{key}`")))
        };
        Ok(Self {
            mode: value.get("mode").and_then(Value::as_str).unwrap_or("unknown").to_string(),
            best_val_ppl: f("best_val_ppl")?,
            best_val_loss: f("best_val_loss")?,
            best_epoch: f("best_epoch")? as u64,
            final_train_loss: f("final_train_loss")?,
            wall_seconds: f("wall_seconds")?,
        })
    }

    pub fn load(run_dir: &Path) -> Result<Self> {
        let path = run_dir.join("metrics.json");
        let text = std::fs::read_to_string(&path)
            .map_err(|e| Error::Report(format!("cannot read {}: {e}", path.display())))?;
        let value: Value =
            serde_json::from_str(&text).map_err(|e| Error::Report(format!("{}: {e}", path.display())))?;
        Self::from_metrics(&value)
    }
}

/// `(base - new) / base`.
pub fn relative_reduction(base: f64, new: f64) -> f64 {
    (base - new) / base
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub baseline: RunSummary,
    pub l2t: RunSummary,
    pub ppl_reduction: f64,
    pub ppl_relative_reduction: f64,
    pub val_loss_reduction: f64,
    pub train_loss_reduction: f64,
    pub train_loss_relative_reduction: f64,
    /// `l2t / baseline` wall-clock; absent when the baseline time is zero.
    pub time_ratio: Option<f64>,
}

impl ComparisonReport {
    pub fn new(baseline: RunSummary, l2t: RunSummary) -> Self {
        let time_ratio = (baseline.wall_seconds > 0.0).then(|| l2t.wall_seconds / baseline.wall_seconds);
        Self {
            ppl_reduction: baseline.best_val_ppl - l2t.best_val_ppl,
            ppl_relative_reduction: relative_reduction(baseline.best_val_ppl, l2t.best_val_ppl),
            val_loss_reduction: baseline.best_val_loss - l2t.best_val_loss,
            train_loss_reduction: baseline.final_train_loss - l2t.final_train_loss,
            train_loss_relative_reduction: relative_reduction(baseline.final_train_loss, l2t.final_train_loss),
            time_ratio,
            baseline,
            l2t,
        }
    }

    /// Plain-text table with one row per metric.
    pub fn table(&self) -> String {
        let (b, l) = (&self.baseline, &self.l2t);
        let pct = |x: f64| format!("{:.1}% reduction", 100.0 * x);
        let rows = [
            ("Validation perplexity", format!("{:.1}", b.best_val_ppl), format!("{:.1}", l.best_val_ppl), pct(self.ppl_relative_reduction)),
            ("Validation loss", format!("{:.3}", b.best_val_loss), format!("{:.3}", l.best_val_loss), format!("{:+.3}", -self.val_loss_reduction)),
            ("Epoch achieved", b.best_epoch.to_string(), l.best_epoch.to_string(), String::new()),
            ("Final training loss", format!("{:.3}", b.final_train_loss), format!("{:.3}", l.final_train_loss), pct(self.train_loss_relative_reduction)),
            (
                "Training time (s)",
                format!("{:.1}", b.wall_seconds),
                format!("{:.1}", l.wall_seconds),
                self.time_ratio.map_or_else(String::new, |r| format!("{:+.1}% time", 100.0 * (r - 1.0))),
            ),
        ];
        let mut out = format!("{:<22} {:>12} {:>12}  {}\n", "Metric", b.mode, l.mode, "Difference");
        for (name, x, y, d) in rows {
            let _ = writeln!(out, "{name:<22} {x:>12} {y:>12}  {d}");
        }
        out
    }
}

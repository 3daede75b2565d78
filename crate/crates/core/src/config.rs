//! Run configuration in a flat `key: value` text format.
//!
//! Grammar: one `key: value` pair per line; blank lines and lines starting
//! with `#` are ignored; keys are unique. Values are decimal numbers,
//! `true`/`false`, paths, or comma-separated integer lists.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dln::DlnConfig;
use crate::error::{Error, Result};
use crate::hyena::HyenaModelConfig;
use crate::optim::OptimizerConfig;
use crate::teacher::TeacherConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Baseline,
    L2t,
}

impl FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(Mode::Baseline),
            "l2t" => Ok(Mode::L2t),
            _ => Err(Error::config("mode", format!("expected `baseline` or `l2t`, got `{s}`"))),
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Baseline => "baseline",
            Mode::L2t => "l2t",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    Cosine,
    Constant,
}

impl FromStr for ScheduleKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "cosine" => Ok(ScheduleKind::Cosine),
            "constant" => Ok(ScheduleKind::Constant),
            _ => Err(format!("expected `cosine` or `constant`, got `{s}`")),
        }
    }
}

impl std::fmt::Display for ScheduleKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ScheduleKind::Cosine => "cosine",
            ScheduleKind::Constant => "constant",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub mode: Mode,
    pub train_path: PathBuf,
    pub valid_path: PathBuf,
    /// When non-zero, a synthetic corpus of this many training tokens
    /// replaces the files.
    pub synthetic_tokens: usize,
    pub synthetic_vocab: usize,
    pub max_vocab: usize,

    pub dim: usize,
    pub n_blocks: usize,
    pub order: usize,
    pub short_kernel: usize,
    pub filter_pos_dim: usize,
    pub filter_hidden: usize,
    pub mlp_expansion: usize,
    pub decay_fastest: f64,
    pub decay_slowest: f64,
    pub embed_init_std: f64,

    pub dln_hidden: usize,
    pub dln_mlp_widths: [usize; 3],
    pub teacher_hidden: usize,

    pub student: OptimizerConfig,
    pub teacher: OptimizerConfig,
    pub dln: OptimizerConfig,
    pub teacher_schedule: ScheduleKind,
    pub dln_schedule: ScheduleKind,

    pub epochs: usize,
    pub batch_size: usize,
    pub seq_len: usize,
    pub warmup_epochs: f64,
    pub lr_min_ratio: f64,
    pub beta: f64,
    pub huber_delta: f64,
    pub clip_norm: f64,
    pub buffer_capacity: usize,
    pub teacher_batch: usize,
    pub priority: f64,
    pub activation_threshold: usize,
    pub seed: u64,
    pub deterministic: bool,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        let model = HyenaModelConfig::default();
        let dln = DlnConfig::default();
        let teacher = TeacherConfig::default();
        Self {
            mode: Mode::L2t,
            train_path: PathBuf::from("data/ptb.train.txt"),
            valid_path: PathBuf::from("data/ptb.valid.txt"),
            synthetic_tokens: 0,
            synthetic_vocab: 200,
            max_vocab: model.vocab_size,
            dim: model.dim,
            n_blocks: model.n_blocks,
            order: model.order,
            short_kernel: model.short_kernel,
            filter_pos_dim: model.filter_pos_dim,
            filter_hidden: model.filter_hidden,
            mlp_expansion: model.mlp_expansion,
            decay_fastest: model.decay_fastest,
            decay_slowest: model.decay_slowest,
            embed_init_std: model.embed_init_std,
            dln_hidden: dln.hidden,
            dln_mlp_widths: dln.mlp_widths,
            teacher_hidden: teacher.hidden,
            student: OptimizerConfig::student(),
            teacher: OptimizerConfig::teacher(),
            dln: OptimizerConfig::dln(),
            teacher_schedule: ScheduleKind::Cosine,
            dln_schedule: ScheduleKind::Cosine,
            epochs: 10,
            batch_size: 128,
            seq_len: 64,
            warmup_epochs: 2.0,
            lr_min_ratio: 0.01,
            beta: 0.01,
            huber_delta: teacher.huber_delta,
            clip_norm: 1.0,
            buffer_capacity: 500,
            teacher_batch: teacher.batch,
            priority: teacher.priority,
            activation_threshold: 64,
            seed: 0,
            deterministic: false,
            out_dir: PathBuf::from("runs/l2t"),
        }
    }
}

fn parse_num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::config(key, format!("cannot parse `{value}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(Error::config(key, format!("expected true/false, got `{value}`"))),
    }
}

impl RunConfig {
    /// Sets one field from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "mode" => self.mode = v.parse()?,
            "train_path" => self.train_path = PathBuf::from(v),
            "valid_path" => self.valid_path = PathBuf::from(v),
            "synthetic_tokens" => self.synthetic_tokens = parse_num(key, v)?,
            "synthetic_vocab" => self.synthetic_vocab = parse_num(key, v)?,
            "max_vocab" => self.max_vocab = parse_num(key, v)?,
            "dim" => self.dim = parse_num(key, v)?,
            "n_blocks" => self.n_blocks = parse_num(key, v)?,
            "order" => self.order = parse_num(key, v)?,
            "short_kernel" => self.short_kernel = parse_num(key, v)?,
            "filter_pos_dim" => self.filter_pos_dim = parse_num(key, v)?,
            "filter_hidden" => self.filter_hidden = parse_num(key, v)?,
            "mlp_expansion" => self.mlp_expansion = parse_num(key, v)?,
            "decay_fastest" => self.decay_fastest = parse_num(key, v)?,
            "decay_slowest" => self.decay_slowest = parse_num(key, v)?,
            "embed_init_std" => self.embed_init_std = parse_num(key, v)?,
            "dln_hidden" => self.dln_hidden = parse_num(key, v)?,
            "dln_mlp_widths" => {
                let parts: Vec<usize> = v
                    .split(',')
                    .map(|p| parse_num(key, p.trim()))
                    .collect::<Result<_>>()?;
                self.dln_mlp_widths = parts
                    .try_into()
                    .map_err(|_| Error::config(key, "expected exactly three widths"))?;
            }
            "teacher_hidden" => self.teacher_hidden = parse_num(key, v)?,
            "student_lr" => self.student.learning_rate = parse_num(key, v)?,
            "student_weight_decay" => self.student.weight_decay = parse_num(key, v)?,
            "teacher_lr" => self.teacher.learning_rate = parse_num(key, v)?,
            "teacher_weight_decay" => self.teacher.weight_decay = parse_num(key, v)?,
            "dln_lr" => self.dln.learning_rate = parse_num(key, v)?,
            "dln_weight_decay" => self.dln.weight_decay = parse_num(key, v)?,
            "weight_decay" => {
                // shorthand for all three components
                let wd: f64 = parse_num(key, v)?;
                self.student.weight_decay = wd;
                self.teacher.weight_decay = wd;
                self.dln.weight_decay = wd;
            }
            "adam_beta1" | "adam_beta2" | "adam_eps" => {
                let x: f64 = parse_num(key, v)?;
                for o in [&mut self.student, &mut self.teacher, &mut self.dln] {
                    match key {
                        "adam_beta1" => o.beta1 = x,
                        "adam_beta2" => o.beta2 = x,
                        _ => o.eps = x,
                    }
                }
            }
            "teacher_schedule" => self.teacher_schedule = v.parse().map_err(|m: String| Error::config(key, m))?,
            "dln_schedule" => self.dln_schedule = v.parse().map_err(|m: String| Error::config(key, m))?,
            "epochs" => self.epochs = parse_num(key, v)?,
            "batch_size" => self.batch_size = parse_num(key, v)?,
            "seq_len" => self.seq_len = parse_num(key, v)?,
            "warmup_epochs" => self.warmup_epochs = parse_num(key, v)?,
            "lr_min_ratio" => self.lr_min_ratio = parse_num(key, v)?,
            "beta" => self.beta = parse_num(key, v)?,
            "huber_delta" => self.huber_delta = parse_num(key, v)?,
            "clip_norm" => self.clip_norm = parse_num(key, v)?,
            "buffer_capacity" => self.buffer_capacity = parse_num(key, v)?,
            "teacher_batch" => self.teacher_batch = parse_num(key, v)?,
            "priority" => self.priority = parse_num(key, v)?,
            "activation_threshold" => self.activation_threshold = parse_num(key, v)?,
            "seed" => self.seed = parse_num(key, v)?,
            "deterministic" => self.deterministic = parse_bool(key, v)?,
            "out_dir" => self.out_dir = PathBuf::from(v),
            _ => return Err(Error::config(key, "unknown key")),
        }
        Ok(())
    }

    /// Every key with its current value, in canonical order. `weight_decay`
    /// and the shared Adam keys are write-only shorthands and not listed.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let w = self.dln_mlp_widths;
        vec![
            ("mode", self.mode.to_string()),
            ("train_path", self.train_path.display().to_string()),
            ("valid_path", self.valid_path.display().to_string()),
            ("synthetic_tokens", self.synthetic_tokens.to_string()),
            ("synthetic_vocab", self.synthetic_vocab.to_string()),
            ("max_vocab", self.max_vocab.to_string()),
            ("dim", self.dim.to_string()),
            ("n_blocks", self.n_blocks.to_string()),
            ("order", self.order.to_string()),
            ("short_kernel", self.short_kernel.to_string()),
            ("filter_pos_dim", self.filter_pos_dim.to_string()),
            ("filter_hidden", self.filter_hidden.to_string()),
            ("mlp_expansion", self.mlp_expansion.to_string()),
            ("decay_fastest", self.decay_fastest.to_string()),
            ("decay_slowest", self.decay_slowest.to_string()),
            ("embed_init_std", self.embed_init_std.to_string()),
            ("dln_hidden", self.dln_hidden.to_string()),
            ("dln_mlp_widths", format!("{},{},{}", w[0], w[1], w[2])),
            ("teacher_hidden", self.teacher_hidden.to_string()),
            ("student_lr", self.student.learning_rate.to_string()),
            ("student_weight_decay", self.student.weight_decay.to_string()),
            ("teacher_lr", self.teacher.learning_rate.to_string()),
            ("teacher_weight_decay", self.teacher.weight_decay.to_string()),
            ("dln_lr", self.dln.learning_rate.to_string()),
            ("dln_weight_decay", self.dln.weight_decay.to_string()),
            ("adam_beta1", self.student.beta1.to_string()),
            ("adam_beta2", self.student.beta2.to_string()),
            ("adam_eps", self.student.eps.to_string()),
            ("teacher_schedule", self.teacher_schedule.to_string()),
            ("dln_schedule", self.dln_schedule.to_string()),
            ("epochs", self.epochs.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("seq_len", self.seq_len.to_string()),
            ("warmup_epochs", self.warmup_epochs.to_string()),
            ("lr_min_ratio", self.lr_min_ratio.to_string()),
            ("beta", self.beta.to_string()),
            ("huber_delta", self.huber_delta.to_string()),
            ("clip_norm", self.clip_norm.to_string()),
            ("buffer_capacity", self.buffer_capacity.to_string()),
            ("teacher_batch", self.teacher_batch.to_string()),
            ("priority", self.priority.to_string()),
            ("activation_threshold", self.activation_threshold.to_string()),
            ("seed", self.seed.to_string()),
            ("deterministic", self.deterministic.to_string()),
            ("out_dir", self.out_dir.display().to_string()),
        ]
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(out, "{k}: {v}");
        }
        out
    }

    /// Applies `key: value` lines from `text` on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once(':')
                .ok_or_else(|| Error::config(format!("line {}", lineno + 1), format!("expected `key: value`, got `{line}`")))?;
            let key = key.trim();
            if !seen.insert(key.to_string()) {
                return Err(Error::config(key, "duplicate key"));
            }
            self.set(key, value)?;
        }
        Ok(())
    }

    /// Defaults, then `path` (if any), then `overrides` in order; validated.
    pub fn resolve(path: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let mut cfg = Self::default();
        if let Some(path) = path {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::config("config", format!("{}: {e}", path.display())))?;
            cfg.apply_text(&text)?;
        }
        for (k, v) in overrides {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model_config(2).validate()?;
        self.student.validate("student")?;
        self.teacher.validate("teacher")?;
        self.dln.validate("dln")?;
        let positive = [
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
            ("seq_len", self.seq_len),
            ("dln_hidden", self.dln_hidden),
            ("teacher_hidden", self.teacher_hidden),
            ("buffer_capacity", self.buffer_capacity),
            ("teacher_batch", self.teacher_batch),
        ];
        for (key, v) in positive {
            if v == 0 {
                return Err(Error::config(key, "must be positive"));
            }
        }
        if self.dln_mlp_widths.contains(&0) {
            return Err(Error::config("dln_mlp_widths", "widths must be positive"));
        }
        if self.max_vocab < 3 {
            return Err(Error::config("max_vocab", "must be at least 3"));
        }
        if self.synthetic_tokens > 0 && self.synthetic_vocab == 0 {
            return Err(Error::config("synthetic_vocab", "must be positive"));
        }
        let nonneg = [
            ("warmup_epochs", self.warmup_epochs),
            ("beta", self.beta),
            ("priority", self.priority),
        ];
        for (key, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(key, "must be non-negative"));
            }
        }
        if !(self.warmup_epochs < self.epochs as f64) {
            return Err(Error::config("warmup_epochs", "must be shorter than the run"));
        }
        if !(self.lr_min_ratio >= 0.0 && self.lr_min_ratio <= 1.0) {
            return Err(Error::config("lr_min_ratio", "must lie in [0, 1]"));
        }
        for (key, v) in [("huber_delta", self.huber_delta), ("clip_norm", self.clip_norm)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(key, "must be positive"));
            }
        }
        Ok(())
    }

    pub fn model_config(&self, vocab_size: usize) -> HyenaModelConfig {
        HyenaModelConfig {
            vocab_size,
            dim: self.dim,
            n_blocks: self.n_blocks,
            order: self.order,
            short_kernel: self.short_kernel,
            max_seq_len: self.seq_len,
            filter_pos_dim: self.filter_pos_dim,
            filter_hidden: self.filter_hidden,
            mlp_expansion: self.mlp_expansion,
            decay_fastest: self.decay_fastest,
            decay_slowest: self.decay_slowest,
            embed_init_std: self.embed_init_std,
        }
    }

    pub fn dln_config(&self) -> DlnConfig {
        DlnConfig {
            hidden: self.dln_hidden,
            mlp_widths: self.dln_mlp_widths,
        }
    }

    pub fn teacher_config(&self) -> TeacherConfig {
        TeacherConfig {
            hidden: self.teacher_hidden,
            huber_delta: self.huber_delta,
            priority: self.priority,
            batch: self.teacher_batch,
        }
    }

    /// Small synthetic configuration used by smoke runs and tests.
    pub fn smoke() -> Self {
        Self {
            synthetic_tokens: 50_000,
            synthetic_vocab: 200,
            dim: 64,
            n_blocks: 2,
            filter_hidden: 32,
            dln_hidden: 32,
            epochs: 2,
            batch_size: 8,
            seq_len: 32,
            warmup_epochs: 0.25,
            student: OptimizerConfig::new(3e-3, 0.15),
            deterministic: true,
            out_dir: PathBuf::from("runs/smoke"),
            ..Self::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_default_rates() {
        let mut cfg = RunConfig::default();
        cfg.apply_text("").unwrap();
        assert_eq!(cfg.mode, Mode::L2t);
        assert_eq!(cfg.student.learning_rate, 2e-4);
        assert_eq!(cfg.teacher.learning_rate, 2e-6);
        assert_eq!(cfg.dln.learning_rate, 5e-7);
        assert_eq!(cfg.student.weight_decay, 0.15);
        assert_eq!(cfg.teacher.weight_decay, 0.01);
        assert_eq!(cfg.dln.weight_decay, 0.01);
        assert_eq!((cfg.epochs, cfg.batch_size, cfg.seq_len), (10, 128, 64));
        assert_eq!((cfg.dim, cfg.n_blocks, cfg.order, cfg.short_kernel), (256, 6, 2, 3));
        assert_eq!(cfg.buffer_capacity, 500);
        assert_eq!(cfg.max_vocab, 10_000);
    }

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        std::fs::write(&path, "epochs: 10\n# comment\n\nmode: baseline\n").unwrap();
        let cfg = RunConfig::resolve(Some(&path), &[("epochs".into(), "3".into())]).unwrap();
        assert_eq!(cfg.epochs, 3);
        assert_eq!(cfg.mode, Mode::Baseline);
    }

    #[test]
    fn negative_weight_decay_names_key() {
        let mut cfg = RunConfig::default();
        cfg.apply_text("weight_decay: -1").unwrap();
        match cfg.validate() {
            Err(Error::Config { key, .. }) => assert!(key.contains("weight_decay")),
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_and_malformed_keys() {
        let mut cfg = RunConfig::default();
        assert!(matches!(cfg.apply_text("bogus: 1"), Err(Error::Config { key, .. }) if key == "bogus"));
        assert!(matches!(cfg.apply_text("epochs 3"), Err(Error::Config { .. })));
        assert!(matches!(cfg.apply_text("epochs: three"), Err(Error::Config { key, .. }) if key == "epochs"));
        assert!(matches!(cfg.apply_text("seed: 1\nseed: 2"), Err(Error::Config { .. })));
    }

    #[test]
    fn echo_round_trip() {
        for cfg in [RunConfig::default(), RunConfig::smoke()] {
            let mut back = RunConfig::default();
            back.apply_text(&cfg.to_text()).unwrap();
            assert_eq!(back, cfg);
        }
    }

    #[test]
    fn smoke_config_is_valid() {
        RunConfig::smoke().validate().unwrap();
    }
}

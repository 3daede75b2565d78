//! Training loop for the student alone (baseline) or together with the loss
//! network and teacher.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Archive;
use crate::config::{Mode, RunConfig, ScheduleKind};
use crate::corpus::{make_batches, synthetic_corpus, Corpus, TokenBatch};
use crate::dln::{dln_forward, dln_grads, extract_features, normalize_features, DlnParams, FeatureNormState};
use crate::error::{Error, Result};
use crate::hyena::{self, cross_entropy, HyenaModelConfig, HyenaParams};
use crate::optim::{adamw_step, clip_grad_norm, AdamWState, CosineSchedule, OptimizerConfig};
use crate::teacher::{dln_feedback, teacher_step, Experience, MemoryBuffer, TeacherParams};
use crate::tensor::Scalar;

/// Seed offset of the synthetic corpus generator; independent of the run seed
/// so runs with different seeds see the same data.
const SYNTHETIC_SEED: u64 = 17;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: u64,
    /// Objective actually optimized: `ce + lambda * beta * l2`.
    pub loss: f64,
    pub ce: f64,
    pub l2: f64,
    pub lambda: Option<f64>,
    pub grad_norm_student: f64,
    pub grad_norm_teacher: Option<f64>,
    pub grad_norm_dln: Option<f64>,
    pub teacher_huber: Option<f64>,
    pub lr_student: f64,
    pub lr_teacher: f64,
    pub lr_dln: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Mean training cross-entropy over the epoch's steps.
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_ppl: f64,
    pub mean_lambda: Option<f64>,
    pub teacher_huber: Option<f64>,
    /// Student learning rate used by the epoch's last step.
    pub lr_student: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingHistory {
    pub steps: Vec<StepMetrics>,
    pub epochs: Vec<EpochMetrics>,
}

impl TrainingHistory {
    /// Row with the lowest validation perplexity (first one on ties).
    pub fn best_epoch(&self) -> Option<&EpochMetrics> {
        self.epochs
            .iter()
            .fold(None, |best: Option<&EpochMetrics>, e| match best {
                Some(b) if b.val_ppl <= e.val_ppl => Some(b),
                _ => Some(e),
            })
    }
}

/// Token-weighted mean cross-entropy over `batches` and its exponential.
pub fn evaluate<T: Scalar>(params: &HyenaParams<T>, batches: &[TokenBatch]) -> Result<(f64, f64)> {
    if batches.is_empty() {
        return Err(Error::CorpusTooSmall { have: 0, need: 1 });
    }
    let v = params.config.vocab_size;
    let (mut total, mut count) = (0.0, 0usize);
    for b in batches {
        let logits = hyena::forward(params, &b.inputs, b.batch_size, b.seq_len)?;
        total += cross_entropy(&logits, &b.targets, v) * b.n_tokens() as f64;
        count += b.n_tokens();
    }
    let loss = total / count as f64;
    Ok((loss, loss.exp()))
}

fn schedule(cfg: &OptimizerConfig, kind: ScheduleKind, total: u64, warmup: u64, min_ratio: f64) -> CosineSchedule {
    match kind {
        ScheduleKind::Cosine => CosineSchedule {
            total_steps: total,
            warmup_steps: warmup,
            lr_max: cfg.learning_rate,
            lr_min: cfg.learning_rate * min_ratio,
        },
        ScheduleKind::Constant => CosineSchedule {
            total_steps: total,
            warmup_steps: 0,
            lr_max: cfg.learning_rate,
            lr_min: cfg.learning_rate,
        },
    }
}

fn numerical_at(step: u64, e: Error) -> Error {
    match e {
        Error::Numerical(msg) => Error::Numerical(format!("step {step}: {msg}")),
        other => other,
    }
}

/// All mutable training state for one run.
pub struct Learner {
    pub config: RunConfig,
    pub student: HyenaParams<f32>,
    pub dln: DlnParams<f64>,
    pub teacher: TeacherParams<f64>,
    pub norm: FeatureNormState,
    pub buffer: MemoryBuffer,
    student_opt: AdamWState<f32>,
    dln_opt: AdamWState<f64>,
    teacher_opt: AdamWState<f64>,
    pub schedules: [CosineSchedule; 3],
    rng: ChaCha8Rng,
    pub step: u64,
}

impl Learner {
    /// Fresh components for a vocabulary of `vocab_size` and
    /// `batches_per_epoch` optimizer steps per epoch.
    pub fn new(config: &RunConfig, vocab_size: usize, batches_per_epoch: usize) -> Result<Self> {
        config.validate()?;
        let model = config.model_config(vocab_size);
        let student = HyenaParams::<f32>::init(&model, config.seed)?;
        let dln = DlnParams::<f64>::init(&config.dln_config(), config.seed.wrapping_add(1));
        let teacher = TeacherParams::<f64>::init(config.dln_hidden, config.teacher_hidden, config.seed.wrapping_add(2));
        let total = (config.epochs * batches_per_epoch) as u64;
        let warmup = (config.warmup_epochs * batches_per_epoch as f64).round() as u64;
        let r = config.lr_min_ratio;
        let schedules = [
            schedule(&config.student, ScheduleKind::Cosine, total, warmup, r),
            schedule(&config.teacher, config.teacher_schedule, total, warmup, r),
            schedule(&config.dln, config.dln_schedule, total, warmup, r),
        ];
        Ok(Self {
            student_opt: AdamWState::new(&student),
            dln_opt: AdamWState::new(&dln),
            teacher_opt: AdamWState::new(&teacher),
            config: config.clone(),
            student,
            dln,
            teacher,
            norm: FeatureNormState::default(),
            buffer: MemoryBuffer::new(config.buffer_capacity),
            schedules,
            rng: ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(3)),
            step: 0,
        })
    }

    fn teacher_active(&self) -> bool {
        self.buffer.len() >= self.config.activation_threshold
    }

    /// One optimizer step on `batch`.
    pub fn train_step(&mut self, batch: &TokenBatch) -> Result<StepMetrics> {
        let step = self.step;
        self.train_step_inner(batch).map_err(|e| numerical_at(step, e))
    }

    fn train_step_inner(&mut self, batch: &TokenBatch) -> Result<StepMetrics> {
        let cfg = &self.config;
        let (b, l) = (batch.batch_size, batch.seq_len);
        let v = self.student.config.vocab_size;
        let lr = self.schedules.map(|s| s.lr(self.step));

        let (logits, cache) = hyena::forward_train(&self.student, &batch.inputs, b, l)?;

        let dln_out = match cfg.mode {
            Mode::Baseline => None,
            Mode::L2t => {
                let feats = extract_features(&logits, &batch.targets, b, l, v);
                let normed = normalize_features(&feats, &mut self.norm, true);
                let out = dln_forward(&normed, &self.dln);
                if !(out.lambda > 0.0 && out.lambda < 1.0) {
                    return Err(Error::Numerical(format!("loss weight {} left (0, 1)", out.lambda)));
                }
                Some(out)
            }
        };
        let lambda = dln_out.as_ref().map(|o| o.lambda);

        let mut st = hyena::loss_and_backward(
            &self.student,
            cache,
            logits,
            &batch.targets,
            lambda.unwrap_or(0.0),
            cfg.beta,
        )?;
        let grad_norm_student = clip_grad_norm(&mut st.grads, cfg.clip_norm);
        adamw_step(&mut self.student, &st.grads, &mut self.student_opt, &cfg.student, lr[0])?;

        let mut metrics = StepMetrics {
            step: self.step,
            loss: st.loss,
            ce: st.ce,
            l2: st.l2,
            lambda,
            grad_norm_student,
            grad_norm_teacher: None,
            grad_norm_dln: None,
            teacher_huber: None,
            lr_student: lr[0],
            lr_teacher: lr[1],
            lr_dln: lr[2],
        };

        if let Some(out) = dln_out {
            self.buffer.push(Experience {
                summary: out.summary.clone(),
                lambda: out.lambda,
                student_loss: st.loss,
                step: self.step,
            })?;
            if self.teacher_active() {
                let tcfg = self.config.teacher_config();
                let (mut tg, huber) = teacher_step(&self.buffer, &self.teacher, &tcfg, &mut self.rng)?;
                metrics.teacher_huber = Some(huber);
                metrics.grad_norm_teacher = Some(clip_grad_norm(&mut tg, self.config.clip_norm));
                adamw_step(&mut self.teacher, &tg, &mut self.teacher_opt, &self.config.teacher, lr[1])?;

                let upstream = dln_feedback(&out.summary, out.lambda, &self.teacher);
                let mut dg = dln_grads(&self.dln, &out.trace, upstream);
                metrics.grad_norm_dln = Some(clip_grad_norm(&mut dg, self.config.clip_norm));
                adamw_step(&mut self.dln, &dg, &mut self.dln_opt, &self.config.dln, lr[2])?;
            }
        }

        self.step += 1;
        Ok(metrics)
    }

    /// Every component as a named archive. Baseline runs store the student only.
    pub fn to_archive(&self) -> Archive {
        let mut archive = Archive::default();
        archive.push_params("student", &self.student);
        if self.config.mode == Mode::L2t {
            archive.push_params("dln", &self.dln);
            archive.push_params("teacher", &self.teacher);
            let to32 = |x: &[f64]| x.iter().map(|&v| v as f32).collect();
            archive.push("dln_norm.mean", &[self.norm.mean.len()], to32(&self.norm.mean));
            archive.push("dln_norm.var", &[self.norm.var.len()], to32(&self.norm.var));
        }
        archive
    }
}

/// Student parameters for `model` restored from `archive`.
pub fn load_student(archive: &Archive, model: &HyenaModelConfig) -> Result<HyenaParams<f32>> {
    let mut params = HyenaParams::<f32>::init(model, 0)?;
    archive.restore_params("student", &mut params)?;
    Ok(params)
}

/// Corpus named by the configuration: synthetic when `synthetic_tokens > 0`.
pub fn load_corpus(config: &RunConfig) -> Result<Corpus> {
    if config.synthetic_tokens > 0 {
        synthetic_corpus(config.synthetic_tokens, config.synthetic_vocab, SYNTHETIC_SEED, config.max_vocab)
    } else {
        Corpus::load(&config.train_path, &config.valid_path, config.max_vocab)
    }
}

/// Outcome of [`train`].
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub history: TrainingHistory,
    pub vocab_size: usize,
    pub wall_seconds: f64,
    pub best_checkpoint: Option<PathBuf>,
    pub last_checkpoint: Option<PathBuf>,
}

/// Runs every epoch on `corpus`, evaluating after each one. When `out_dir` is
/// given, `best.l2th` and `last.l2th` are written there. `on_epoch` sees
/// each epoch row as soon as it is complete.
pub fn train(
    config: &RunConfig,
    corpus: &Corpus,
    out_dir: Option<&Path>,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<TrainOutcome> {
    let train_batches = make_batches(&corpus.train, config.batch_size, config.seq_len)?;
    let valid_batches = make_batches(&corpus.valid, config.batch_size, config.seq_len)?;
    let mut learner = Learner::new(config, corpus.vocab.len(), train_batches.len())?;
    let started = Instant::now();
    let mut history = TrainingHistory::default();
    let mut best_ppl = f64::INFINITY;
    let best_path = out_dir.map(|d| d.join("best.l2th"));
    let last_path = out_dir.map(|d| d.join("last.l2th"));

    for epoch in 1..=config.epochs {
        let epoch_start = Instant::now();
        let first = history.steps.len();
        for batch in &train_batches {
            let m = learner.train_step(batch)?;
            history.steps.push(m);
        }
        let rows = &history.steps[first..];
        let n = rows.len() as f64;
        let lambdas: Vec<f64> = rows.iter().filter_map(|m| m.lambda).collect();
        let hubers: Vec<f64> = rows.iter().filter_map(|m| m.teacher_huber).collect();
        let mean = |xs: &[f64]| (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64);
        let (val_loss, val_ppl) = evaluate(&learner.student, &valid_batches)?;
        let row = EpochMetrics {
            epoch,
            train_loss: rows.iter().map(|m| m.ce).sum::<f64>() / n,
            val_loss,
            val_ppl,
            mean_lambda: mean(&lambdas),
            teacher_huber: mean(&hubers),
            lr_student: rows.last().map_or(0.0, |m| m.lr_student),
            seconds: if config.deterministic {
                0.0
            } else {
                epoch_start.elapsed().as_secs_f64()
            },
        };
        if val_ppl < best_ppl {
            best_ppl = val_ppl;
            if let Some(p) = &best_path {
                learner.to_archive().save(p)?;
            }
        }
        on_epoch(&row);
        history.epochs.push(row);
    }
    if let Some(p) = &last_path {
        learner.to_archive().save(p)?;
    }
    Ok(TrainOutcome {
        history,
        vocab_size: corpus.vocab.len(),
        wall_seconds: started.elapsed().as_secs_f64(),
        best_checkpoint: best_path,
        last_checkpoint: last_path,
    })
}

//! Teacher-forced training with Adam, the warmup/decay schedule, periodic
//! greedy validation by sentence BLEU, early stopping and checkpoints.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::batch::{make_batches, sequential_batches, Encoded};
use crate::corpus::Record;
use crate::metrics::{self, MetricError, MetricReport};
use crate::model::{Checkpoint, CheckpointError, Model, ModelError};
use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor, TensorError};
use crate::vocab::Vocabs;

pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const LAST_CHECKPOINT: &str = "last.ckpt";
pub const METRICS_LOG: &str = "metrics.jsonl";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub warmup_steps: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub max_epochs: usize,
    pub patience: usize,
    /// Validate every this many minibatches (global counter); 0 disables.
    pub validate_every: usize,
    pub validate_each_epoch: bool,
    /// Hard cap on optimizer steps, if any.
    pub max_steps: Option<usize>,
    /// Stop as soon as a validation score reaches this value.
    pub stop_at_sbleu: Option<f64>,
    pub batch_size: usize,
    /// Decoding cap for validation and evaluation.
    pub max_decode: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            warmup_steps: 4000,
            beta1: 0.9,
            beta2: 0.98,
            adam_eps: 1e-9,
            max_epochs: 50,
            patience: 5,
            validate_every: 500,
            validate_each_epoch: true,
            max_steps: None,
            stop_at_sbleu: None,
            batch_size: 100,
            max_decode: 20,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if self.warmup_steps == 0 {
            return bad("warmup_steps must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if self.max_decode == 0 {
            return bad("max_decode must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("Adam betas must be in [0, 1)");
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid trainer config: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("nothing to evaluate: the split is empty")]
    EmptySplit,
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> TrainError + '_ {
    move |source| TrainError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// `d_model^-0.5 · min(step^-0.5, step · warmup^-1.5)`, for `step ≥ 1`.
pub fn lr_schedule(step: usize, d_model: usize, warmup: usize) -> f64 {
    let s = step.max(1) as f64;
    (d_model as f64).powf(-0.5) * s.powf(-0.5).min(s * (warmup as f64).powf(-1.5))
}

/// First and second moment estimates per parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Updates applied so far.
    pub t: u64,
}

impl<T: Scalar> Adam<T> {
    pub fn new(params: &[Tensor<T>], beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        Self {
            m: zeros(),
            v: zeros(),
            beta1,
            beta2,
            eps,
            t: 0,
        }
    }

    /// One bias-corrected Adam update at learning rate `rate`.
    pub fn step(&mut self, params: &mut [Tensor<T>], grads: &[Tensor<T>], rate: f64) -> Result<(), TensorError> {
        for (p, g) in params.iter().zip(grads) {
            if p.shape() != g.shape() {
                return Err(TensorError::Shape {
                    op: "adam_step",
                    lhs: p.shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
        }
        if params.len() != grads.len() || params.len() != self.m.len() {
            return Err(TensorError::Shape {
                op: "adam_step",
                lhs: vec![params.len()],
                rhs: vec![grads.len()],
            });
        }
        self.t += 1;
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let c1 = T::of(1.0 - self.beta1.powi(self.t as i32));
        let c2 = T::of(1.0 - self.beta2.powi(self.t as i32));
        let (lr, eps) = (T::of(rate), T::of(self.eps));
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for (k, (x, &gk)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                m[k] = b1 * m[k] + (T::one() - b1) * gk;
                v[k] = b2 * v[k] + (T::one() - b2) * gk * gk;
                let mh = m[k] / c1;
                let vh = v[k] / c2;
                *x -= lr * mh / (vh.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    /// Optimizer steps taken (global minibatch counter).
    pub step: usize,
    pub epoch: usize,
    /// Minibatches of `epoch` already consumed.
    pub batch_in_epoch: usize,
    /// Best validation score so far; `None` before the first validation.
    pub best_val_sbleu: Option<f64>,
    pub patience_left: usize,
    pub seed: u64,
    pub finished: bool,
}

impl TrainState {
    pub fn new(patience: usize, seed: u64) -> Self {
        Self {
            step: 0,
            epoch: 0,
            batch_in_epoch: 0,
            best_val_sbleu: None,
            patience_left: patience,
            seed,
            finished: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verdict {
    Improved,
    NoImprovement,
    Stop,
}

/// Patience bookkeeping: strict improvement resets, anything else counts.
pub fn observe_validation(state: &mut TrainState, score: f64, patience: usize) -> Verdict {
    if state.best_val_sbleu.is_none_or(|b| score > b) {
        state.best_val_sbleu = Some(score);
        state.patience_left = patience;
        Verdict::Improved
    } else {
        state.patience_left = state.patience_left.saturating_sub(1);
        if state.patience_left == 0 {
            Verdict::Stop
        } else {
            Verdict::NoImprovement
        }
    }
}

/// Produces the validation score; the default decodes greedily and averages
/// sentence BLEU.
pub trait Validator<T: Scalar> {
    fn score(&mut self, model: &Model<T>) -> Result<f64, TrainError>;
}

pub struct GreedyBleu<'a> {
    pub samples: &'a [Encoded],
    pub references: &'a [Vec<String>],
    pub vocabs: &'a Vocabs,
    pub batch_size: usize,
    pub max_decode: usize,
}

impl<T: Scalar> Validator<T> for GreedyBleu<'_> {
    fn score(&mut self, model: &Model<T>) -> Result<f64, TrainError> {
        let preds = decode_all(model, self.samples, self.vocabs, self.batch_size, self.max_decode)?;
        let mut total = 0.0;
        for (p, r) in preds.iter().zip(self.references) {
            total += metrics::sentence_bleu(p, r)?;
        }
        Ok(total / self.samples.len().max(1) as f64)
    }
}

/// Greedy predictions as comment words, in sample order.
pub fn decode_all<T: Scalar>(
    model: &Model<T>,
    samples: &[Encoded],
    vocabs: &Vocabs,
    batch_size: usize,
    max_decode: usize,
) -> Result<Vec<Vec<String>>, TrainError> {
    let batches = sequential_batches(samples, batch_size);
    let decoded: Vec<Vec<Vec<u32>>> = batches
        .par_iter()
        .map(|b| model.greedy_decode(b, max_decode))
        .collect::<Result<_, _>>()?;
    Ok(decoded
        .into_iter()
        .flatten()
        .map(|ids| vocabs.comment.decode(&ids))
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub step: usize,
    pub epoch: usize,
    pub train_loss: f64,
    pub lr: f64,
    pub val_sbleu: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct SavedState {
    train: TrainState,
    config: TrainConfig,
    adam_t: u64,
}

/// Everything a run owns: model, optimizer, progress.
pub struct Trainer<T: Scalar> {
    pub model: Model<T>,
    pub adam: Adam<T>,
    pub state: TrainState,
    pub config: TrainConfig,
    pub vocab_digests: Vec<String>,
    pub log: Vec<LogRecord>,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(model: Model<T>, config: TrainConfig, vocab_digests: Vec<String>) -> Result<Self, TrainError> {
        config.validate()?;
        let adam = Adam::new(model.params.tensors(), config.beta1, config.beta2, config.adam_eps);
        Ok(Self {
            state: TrainState::new(config.patience, config.seed),
            adam,
            model,
            config,
            vocab_digests,
            log: Vec::new(),
        })
    }

    fn dropout_rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed ^ 0x5EED_D20F);
        rng.set_stream(self.state.step as u64);
        rng
    }

    /// One teacher-forced update on `batch`; returns the loss before the update.
    pub fn step(&mut self, batch: &crate::batch::Batch) -> Result<f64, TrainError> {
        let tape = Tape::new();
        let vars = self.model.bind(&tape);
        let mut rng = self.dropout_rng();
        let use_dropout = self.model.config.dropout > 0.0;
        let loss = self
            .model
            .loss(&tape, &vars, batch, use_dropout.then_some(&mut rng))?;
        let value = tape.value(loss).item().as_f64();
        let mut grads = tape.backward(loss)?;
        let grads: Vec<Tensor<T>> = vars
            .iter()
            .zip(self.model.params.tensors())
            .map(|(&v, p)| grads.take(v).unwrap_or_else(|| Tensor::zeros(p.shape())))
            .collect();
        self.state.step += 1;
        let rate = lr_schedule(self.state.step, self.model.config.d_model, self.config.warmup_steps);
        self.adam.step(self.model.params.tensors_mut(), &grads, rate)?;
        Ok(value)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::from_model(&self.model, self.vocab_digests.clone());
        for (i, name) in self.model.params.names().iter().enumerate() {
            ck.tensors.push((format!("adam.m/{name}"), self.adam.m[i].cast()));
            ck.tensors.push((format!("adam.v/{name}"), self.adam.v[i].cast()));
        }
        ck.state = serde_json::to_value(SavedState {
            train: self.state.clone(),
            config: self.config.clone(),
            adam_t: self.adam.t,
        })
        .expect("state serializes");
        ck
    }

    /// Restores model, optimizer and progress from a checkpoint written by
    /// [`Trainer::checkpoint`].
    pub fn resume(ck: &Checkpoint) -> Result<Self, TrainError> {
        let model = ck.model::<T>()?;
        let saved: SavedState = serde_json::from_value(ck.state.clone())
            .map_err(|e| CheckpointError::Format(format!("trainer state: {e}")))?;
        let mut adam = Adam::new(model.params.tensors(), saved.config.beta1, saved.config.beta2, saved.config.adam_eps);
        adam.t = saved.adam_t;
        for (i, name) in model.params.names().iter().enumerate() {
            let get = |k: &str| {
                ck.tensor(&format!("{k}/{name}"))
                    .map(Tensor::cast)
                    .ok_or_else(|| CheckpointError::Format(format!("missing {k}/{name}")))
            };
            adam.m[i] = get("adam.m")?;
            adam.v[i] = get("adam.v")?;
        }
        Ok(Self {
            model,
            adam,
            state: saved.train,
            config: saved.config,
            vocab_digests: ck.vocab_digests.clone(),
            log: Vec::new(),
        })
    }

    fn out_of_budget(&self) -> bool {
        self.state.epoch >= self.config.max_epochs
            || self.config.max_steps.is_some_and(|m| self.state.step >= m)
    }

    /// Runs until early stopping, the epoch limit or the step cap. With an
    /// `out_dir`, writes the metrics log, `best.ckpt` on every improvement
    /// and `last.ckpt` after every validation and at the end.
    pub fn run(
        &mut self,
        train: &[Encoded],
        validator: &mut dyn Validator<T>,
        out_dir: Option<&Path>,
    ) -> Result<(), TrainError> {
        if train.is_empty() {
            return Err(TrainError::EmptySplit);
        }
        let mut log_file = match out_dir {
            Some(dir) => {
                fs::create_dir_all(dir).map_err(io_err(dir))?;
                let path = dir.join(METRICS_LOG);
                let f = fs::OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(&path)
                    .map_err(io_err(&path))?;
                Some((f, path))
            }
            None => None,
        };
        while !self.state.finished && !self.out_of_budget() {
            let batches = make_batches(train, self.config.batch_size, self.config.seed, self.state.epoch as u64);
            while self.state.batch_in_epoch < batches.len() && !self.out_of_budget() {
                let loss = self.step(&batches[self.state.batch_in_epoch])?;
                self.state.batch_in_epoch += 1;
                let lr = lr_schedule(self.state.step, self.model.config.d_model, self.config.warmup_steps);
                let epoch_end = self.state.batch_in_epoch == batches.len();
                let periodic = self.config.validate_every > 0 && self.state.step.is_multiple_of(self.config.validate_every);
                let val = if periodic || (epoch_end && self.config.validate_each_epoch) {
                    Some(self.validate(validator, out_dir)?)
                } else {
                    None
                };
                let record = LogRecord {
                    step: self.state.step,
                    epoch: self.state.epoch,
                    train_loss: loss,
                    lr,
                    val_sbleu: val,
                };
                if let Some((f, path)) = &mut log_file {
                    let line = serde_json::to_string(&record).expect("log serializes");
                    writeln!(f, "{line}").map_err(io_err(path))?;
                }
                log::debug!("step {} loss {loss:.4} lr {lr:.3e}", self.state.step);
                self.log.push(record);
                if self.state.finished {
                    break;
                }
            }
            if self.state.batch_in_epoch == batches.len() {
                self.state.epoch += 1;
                self.state.batch_in_epoch = 0;
            }
        }
        if let Some(dir) = out_dir {
            if self.state.best_val_sbleu.is_none() {
                // Never validated: the final model is the best one we have.
                self.save(&dir.join(BEST_CHECKPOINT))?;
            }
            self.save(&dir.join(LAST_CHECKPOINT))?;
        }
        Ok(())
    }

    fn validate(&mut self, validator: &mut dyn Validator<T>, out_dir: Option<&Path>) -> Result<f64, TrainError> {
        let score = validator.score(&self.model)?;
        let verdict = observe_validation(&mut self.state, score, self.config.patience);
        log::info!(
            "step {} validation S-BLEU {score:.4} ({verdict:?}, patience {})",
            self.state.step,
            self.state.patience_left
        );
        if verdict == Verdict::Stop || self.config.stop_at_sbleu.is_some_and(|t| score >= t) {
            self.state.finished = true;
        }
        if let Some(dir) = out_dir {
            if verdict == Verdict::Improved {
                self.save(&dir.join(BEST_CHECKPOINT))?;
            }
            self.save(&dir.join(LAST_CHECKPOINT))?;
        }
        Ok(score)
    }

    pub fn save(&self, path: &Path) -> Result<(), TrainError> {
        Ok(self.checkpoint().save(path)?)
    }
}

/// Greedy-decodes every record and scores against its comment.
pub fn evaluate<T: Scalar>(
    model: &Model<T>,
    vocabs: &Vocabs,
    records: &[Record],
    batch_size: usize,
    max_decode: usize,
) -> Result<(MetricReport, Vec<Vec<String>>), TrainError> {
    if records.is_empty() {
        return Err(TrainError::EmptySplit);
    }
    for r in records {
        model.config.mode.check_record(r)?;
    }
    let samples: Vec<Encoded> = records.iter().map(|r| Encoded::new(r, vocabs)).collect();
    let preds = decode_all(model, &samples, vocabs, batch_size, max_decode)?;
    let pairs: Vec<(Vec<String>, Vec<String>)> = preds
        .iter()
        .cloned()
        .zip(records.iter().map(|r| r.comment.clone()))
        .collect();
    Ok((MetricReport::compute(&pairs)?, preds))
}

pub fn write_predictions(path: &Path, preds: &[Vec<String>]) -> Result<(), TrainError> {
    let mut body = String::new();
    for p in preds {
        body.push_str(&p.join(" "));
        body.push('\n');
    }
    fs::write(path, body).map_err(io_err(path))
}

//! The training loop. Every random choice is a pure function of the seed
//! and the global update index (batch order by epoch, noise by epoch and
//! example, dropout by update and microbatch), so resuming from a
//! checkpoint continues exactly where an uninterrupted run would be.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Instant;

use rand::seq::SliceRandom;

use super::{accumulate_gradients, adam_step, plan_batches, AdamHyper, LrSchedule, OptimError, OptimizerState, TrainConfig};
use crate::model::checkpoint::checkpoint_file_name;
use crate::model::{batch_loss, loss_and_gradients, Batch, Checkpoint, DropoutCtx, ModelConfig, Parameters};
use crate::noising::{make_pretrain_pair, NoiseConfig};
use crate::rng::{self, purpose};
use crate::textnorm::split_sentences;
use crate::tokenizer::{SeqKind, Vocabulary, EOS_ID};

pub const METRICS_HEADER: &str = "step,epoch,lr,loss,tokens_per_sec";

/// Training examples that may be regenerated differently each epoch.
pub trait EpochSource {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Per-example (source, target) length estimates used for bucketing;
    /// fixed across epochs.
    fn planning_lengths(&self) -> Vec<(usize, usize)>;

    /// (source ids, target ids) for `index` in `epoch`.
    fn example(&self, epoch: u64, index: usize) -> (Vec<u32>, Vec<u32>);
}

/// Caps a source at `max` ids, keeping the final eos.
fn fit_source(mut ids: Vec<u32>, max: usize) -> Vec<u32> {
    if ids.len() > max {
        ids.truncate(max - 1);
        ids.push(EOS_ID);
    }
    ids
}

/// Caps a bos..eos target so its decoder side has at most `max` positions.
fn fit_target(ids: Vec<u32>, max: usize) -> Vec<u32> {
    fit_source(ids, max + 1)
}

/// Documents noised afresh each epoch. Documents too long for the model
/// are split at sentence boundaries into chunks that fit.
pub struct PretrainSource<'v> {
    texts: Vec<String>,
    lengths: Vec<usize>,
    vocab: &'v Vocabulary,
    noise: NoiseConfig,
    max_positions: usize,
}

impl<'v> PretrainSource<'v> {
    pub fn new<S: AsRef<str>>(
        docs: &[S],
        vocab: &'v Vocabulary,
        noise: &NoiseConfig,
        max_positions: usize,
    ) -> Result<Self, OptimError> {
        noise
            .validate()
            .map_err(|e| OptimError::InvalidConfig(e.to_string()))?;
        let mut texts = Vec::new();
        let mut lengths = Vec::new();
        let target_len = |t: &str| vocab.encode(t, SeqKind::Target).len();
        for doc in docs {
            let doc = doc.as_ref();
            if doc.trim().is_empty() {
                continue;
            }
            if target_len(doc) <= max_positions {
                lengths.push(target_len(doc));
                texts.push(doc.to_string());
                continue;
            }
            let mut chunk = String::new();
            for sentence in split_sentences(doc) {
                let candidate = if chunk.is_empty() {
                    sentence.clone()
                } else {
                    format!("{chunk} {sentence}")
                };
                if target_len(&candidate) > max_positions && !chunk.is_empty() {
                    lengths.push(target_len(&chunk));
                    texts.push(std::mem::replace(&mut chunk, sentence));
                } else {
                    chunk = candidate;
                }
            }
            if !chunk.is_empty() {
                lengths.push(target_len(&chunk).min(max_positions + 1));
                texts.push(chunk);
            }
        }
        Ok(Self {
            texts,
            lengths,
            vocab,
            noise: noise.clone(),
            max_positions,
        })
    }

    pub fn texts(&self) -> &[String] {
        &self.texts
    }
}

impl EpochSource for PretrainSource<'_> {
    fn len(&self) -> usize {
        self.texts.len()
    }

    fn planning_lengths(&self) -> Vec<(usize, usize)> {
        self.lengths.iter().map(|&l| (l - 1, l - 1)).collect()
    }

    fn example(&self, epoch: u64, index: usize) -> (Vec<u32>, Vec<u32>) {
        let epoch_seed = rng::derive_seed(rng::derive_seed(self.noise.seed, purpose::NOISE), epoch);
        let mut r = rng::stream(epoch_seed, index as u64);
        let (src, tgt) = make_pretrain_pair(&self.texts[index], self.vocab, &self.noise, &mut r);
        (
            fit_source(src.ids, self.max_positions),
            fit_target(tgt.ids, self.max_positions),
        )
    }
}

/// Fixed (document, summary) pairs.
pub struct FinetuneSource {
    pairs: Vec<(Vec<u32>, Vec<u32>)>,
}

impl FinetuneSource {
    pub fn new<S: AsRef<str>, T: AsRef<str>>(pairs: &[(S, T)], vocab: &Vocabulary, max_positions: usize) -> Self {
        let pairs = pairs
            .iter()
            .map(|(d, s)| {
                (
                    fit_source(vocab.encode(d.as_ref(), SeqKind::Source).ids, max_positions),
                    fit_target(vocab.encode(s.as_ref(), SeqKind::Target).ids, max_positions),
                )
            })
            .collect();
        Self { pairs }
    }

    pub fn from_ids(pairs: Vec<(Vec<u32>, Vec<u32>)>) -> Self {
        Self { pairs }
    }

    pub fn pairs(&self) -> &[(Vec<u32>, Vec<u32>)] {
        &self.pairs
    }
}

impl EpochSource for FinetuneSource {
    fn len(&self) -> usize {
        self.pairs.len()
    }

    fn planning_lengths(&self) -> Vec<(usize, usize)> {
        self.pairs.iter().map(|(s, t)| (s.len(), t.len() - 1)).collect()
    }

    fn example(&self, _epoch: u64, index: usize) -> (Vec<u32>, Vec<u32>) {
        self.pairs[index].clone()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    /// Updates completed, including this one.
    pub step: u64,
    pub lr: f64,
    /// Mean of the microbatch losses.
    pub loss: f64,
    pub tokens: usize,
}

/// Parameters, optimizer state and schedule for one run.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub model_cfg: ModelConfig,
    pub train_cfg: TrainConfig,
    pub params: Parameters,
    pub state: OptimizerState,
    pub schedule: LrSchedule,
    /// Dropout used by the next update.
    pub dropout: f64,
}

impl Trainer {
    pub fn new(
        model_cfg: ModelConfig,
        train_cfg: TrainConfig,
        params: Parameters,
        total_steps: u64,
    ) -> Result<Self, OptimError> {
        model_cfg.validate()?;
        train_cfg.validate()?;
        let state = OptimizerState::new(&params);
        let schedule = LrSchedule::new(train_cfg.peak_lr, train_cfg.warmup_frac, total_steps);
        let dropout = train_cfg.dropout_for_epoch(0, model_cfg.dropout);
        Ok(Self {
            model_cfg,
            train_cfg,
            params,
            state,
            schedule,
            dropout,
        })
    }

    /// Continues from a checkpoint's parameters, moments and step.
    pub fn resume(ckpt: Checkpoint, train_cfg: TrainConfig, total_steps: u64) -> Result<Self, OptimError> {
        let mut t = Self::new(ckpt.config, train_cfg, ckpt.params, total_steps)?;
        if let Some((m, v)) = ckpt.moments {
            t.state.m = m;
            t.state.v = v;
        }
        t.state.step = ckpt.step;
        Ok(t)
    }

    pub fn step(&self) -> u64 {
        self.state.step
    }

    /// Averages the gradients of `microbatches` and applies one update at
    /// the schedule's rate for the current step.
    pub fn accumulate_and_step(&mut self, microbatches: &[Batch]) -> Result<StepReport, OptimError> {
        let uf = self.train_cfg.update_frequency;
        if microbatches.len() != uf {
            return Err(OptimError::MicrobatchCount {
                expected: uf,
                got: microbatches.len(),
            });
        }
        let step = self.state.step;
        let lr = self.schedule.lr_at(step)?;
        let dropout_seed = rng::derive_seed(self.train_cfg.seed, purpose::DROPOUT);
        let mut grads = Vec::with_capacity(uf);
        let mut loss_sum = 0.0;
        let mut tokens = 0;
        for (k, batch) in microbatches.iter().enumerate() {
            let mut r = rng::stream(dropout_seed, step * uf as u64 + k as u64);
            let ctx = (self.dropout > 0.0).then(|| DropoutCtx {
                rate: self.dropout,
                rng: &mut r,
            });
            let (loss, g) = loss_and_gradients(&self.params, &self.model_cfg, batch, ctx)?;
            if !loss.is_finite() {
                return Err(OptimError::NonFiniteLoss { step });
            }
            loss_sum += loss;
            tokens += batch.supervised_tokens();
            grads.push(g);
        }
        let mut grad = accumulate_gradients(&grads).expect("update_frequency is at least 1");
        if let Some(max_norm) = self.train_cfg.clip_norm {
            let norm = grad
                .slots()
                .iter()
                .flat_map(|t| t.data())
                .map(|x| x * x)
                .sum::<f64>()
                .sqrt();
            if norm > max_norm {
                for t in grad.slots_mut() {
                    t.scale(max_norm / norm);
                }
            }
        }
        adam_step(
            &mut self.params,
            &grad,
            &mut self.state,
            lr,
            &AdamHyper::from(&self.train_cfg),
        )?;
        Ok(StepReport {
            step: self.state.step,
            lr,
            loss: loss_sum / uf as f64,
            tokens,
        })
    }

    pub fn checkpoint(&self, epoch: u64) -> Checkpoint {
        Checkpoint {
            config: self.model_cfg.clone(),
            step: self.state.step,
            epoch,
            params: self.params.clone(),
            moments: Some((self.state.m.clone(), self.state.v.clone())),
            extra: serde_json::json!({ "train": self.train_cfg }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRow {
    pub step: u64,
    pub epoch: u64,
    pub lr: f64,
    pub loss: f64,
    pub tokens_per_sec: f64,
}

impl LogRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.step, self.epoch, self.lr, self.loss, self.tokens_per_sec
        )
    }
}

#[derive(Default)]
pub struct RunOptions {
    /// Checkpoints and `metrics.csv` go here when set.
    pub out_dir: Option<PathBuf>,
    /// Writes 0 for tokens_per_sec so logs are byte-identical across runs.
    pub deterministic: bool,
    /// Checked before every update; when raised a checkpoint is written and
    /// the run returns early.
    pub stop: Option<Arc<AtomicBool>>,
    /// Evaluated at each epoch end; the best one is saved as
    /// `ckpt_best.bin`.
    pub validation: Vec<Batch>,
    /// Run at most this many updates in this call.
    pub max_updates: Option<u64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub trainer: Trainer,
    pub log: Vec<LogRow>,
    pub epoch: u64,
    pub updates_per_epoch: u64,
    pub interrupted: bool,
    pub final_checkpoint: Option<PathBuf>,
    pub best_checkpoint: Option<PathBuf>,
    pub best_valid_loss: Option<f64>,
}

/// Token-weighted mean loss over evaluation batches.
pub fn validation_loss(params: &Parameters, cfg: &ModelConfig, batches: &[Batch]) -> Result<f64, OptimError> {
    let mut total = 0.0;
    let mut n = 0usize;
    for b in batches {
        let t = b.supervised_tokens();
        total += batch_loss(params, cfg, b)? * t as f64;
        n += t;
    }
    if n == 0 {
        return Err(OptimError::EmptyDataset);
    }
    Ok(total / n as f64)
}

/// How training begins.
pub enum Start {
    /// Fresh initialization from the training seed.
    Fresh,
    /// Given parameters with fresh optimizer state, e.g. a pretrained model.
    Params(Parameters),
    /// Continue a checkpointed run.
    Resume(Checkpoint),
}

fn batch_for(source: &dyn EpochSource, epoch: u64, group: &[usize]) -> Result<Batch, OptimError> {
    let pairs: Vec<(Vec<u32>, Vec<u32>)> = group.iter().map(|&i| source.example(epoch, i)).collect();
    Ok(Batch::from_pairs(&pairs)?)
}

fn save(trainer: &Trainer, epoch: u64, dir: &Path, name: &str) -> Result<PathBuf, OptimError> {
    let path = dir.join(name);
    trainer.checkpoint(epoch).save(&path)?;
    Ok(path)
}

/// Trains on `source` until `total_steps` (or `epochs` worth of updates).
pub fn run_training(
    source: &dyn EpochSource,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    start: Start,
    opts: &RunOptions,
) -> Result<TrainOutcome, OptimError> {
    train_cfg.validate()?;
    model_cfg.validate()?;
    if source.is_empty() {
        return Err(OptimError::EmptyDataset);
    }
    let plan = plan_batches(&source.planning_lengths(), train_cfg.batch_tokens);
    let nb = plan.len();
    let uf = train_cfg.update_frequency;
    let upe = nb.div_ceil(uf) as u64;
    let total = train_cfg.total_steps.unwrap_or(train_cfg.epochs * upe);
    let mut trainer = match start {
        Start::Fresh => {
            let params = crate::model::init_params(model_cfg, train_cfg.seed)?;
            Trainer::new(model_cfg.clone(), train_cfg.clone(), params, total)?
        }
        Start::Params(params) => Trainer::new(model_cfg.clone(), train_cfg.clone(), params, total)?,
        Start::Resume(ckpt) => {
            let mut stored = ckpt.config.clone();
            stored.dropout = model_cfg.dropout;
            if &stored != model_cfg {
                return Err(crate::model::ModelError::Incompatible("checkpoint config differs from model config".into()).into());
            }
            let mut t = Trainer::resume(ckpt, train_cfg.clone(), total)?;
            t.model_cfg = model_cfg.clone();
            t
        }
    };

    let mut csv = match &opts.out_dir {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            let path = dir.join("metrics.csv");
            let fresh = trainer.step() == 0 || !path.exists();
            let mut f = OpenOptions::new()
                .create(true)
                .write(true)
                .append(!fresh)
                .truncate(fresh)
                .open(path)?;
            if fresh {
                writeln!(f, "{METRICS_HEADER}")?;
            }
            Some(f)
        }
        None => None,
    };

    let order_seed = rng::derive_seed(train_cfg.seed, purpose::BATCH_ORDER);
    let mut order: Option<(u64, Vec<usize>)> = None;
    let mut log = Vec::new();
    let mut interrupted = false;
    let mut best: Option<(f64, PathBuf)> = None;
    let mut best_loss = None;
    let stop_at = opts
        .max_updates
        .map_or(total, |n| total.min(trainer.step().saturating_add(n)));
    let mut epoch = trainer.step() / upe.max(1);

    while trainer.step() < stop_at {
        if opts.stop.as_ref().is_some_and(|s| s.load(Ordering::SeqCst)) {
            interrupted = true;
            break;
        }
        let step = trainer.step();
        epoch = step / upe;
        let j = (step % upe) as usize;
        if order.as_ref().map(|(e, _)| *e) != Some(epoch) {
            let mut o: Vec<usize> = (0..nb).collect();
            o.shuffle(&mut rng::stream(order_seed, epoch));
            order = Some((epoch, o));
        }
        let o = &order.as_ref().expect("order set above").1;
        let batches = (0..uf)
            .map(|k| batch_for(source, epoch, &plan[o[(j * uf + k) % nb]]))
            .collect::<Result<Vec<_>, _>>()?;
        trainer.dropout = train_cfg.dropout_for_epoch(epoch, model_cfg.dropout);
        let started = Instant::now();
        let report = trainer.accumulate_and_step(&batches)?;
        let tokens_per_sec = if opts.deterministic {
            0.0
        } else {
            report.tokens as f64 / started.elapsed().as_secs_f64().max(1e-9)
        };
        let row = LogRow {
            step: report.step,
            epoch,
            lr: report.lr,
            loss: report.loss,
            tokens_per_sec,
        };
        if let Some(f) = csv.as_mut() {
            writeln!(f, "{}", row.to_csv())?;
        }
        log.push(row);

        if let (Some(dir), Some(every)) = (&opts.out_dir, train_cfg.checkpoint_every) {
            if every > 0 && report.step % every == 0 && report.step < total {
                save(&trainer, epoch, dir, &checkpoint_file_name(report.step))?;
            }
        }
        let epoch_done = report.step % upe == 0 || report.step == total;
        if epoch_done && !opts.validation.is_empty() {
            let loss = validation_loss(&trainer.params, model_cfg, &opts.validation)?;
            if best.as_ref().is_none_or(|(b, _)| loss < *b) {
                best_loss = Some(loss);
                let path = match &opts.out_dir {
                    Some(dir) => save(&trainer, epoch, dir, "ckpt_best.bin")?,
                    None => PathBuf::new(),
                };
                best = Some((loss, path));
            }
        }
    }
    if let Some(f) = csv.as_mut() {
        f.flush()?;
    }
    let final_checkpoint = match &opts.out_dir {
        Some(dir) => Some(save(&trainer, epoch, dir, &checkpoint_file_name(trainer.step()))?),
        None => None,
    };
    Ok(TrainOutcome {
        trainer,
        log,
        epoch,
        updates_per_epoch: upe,
        interrupted,
        final_checkpoint,
        best_checkpoint: best.and_then(|(_, p)| (!p.as_os_str().is_empty()).then_some(p)),
        best_valid_loss: best_loss,
    })
}

/// Denoising pretraining on raw documents.
pub fn pretrain<S: AsRef<str>>(
    docs: &[S],
    vocab: &Vocabulary,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    noise_cfg: &NoiseConfig,
    start: Start,
    opts: &RunOptions,
) -> Result<TrainOutcome, OptimError> {
    let source = PretrainSource::new(docs, vocab, noise_cfg, model_cfg.max_positions)?;
    run_training(&source, model_cfg, train_cfg, start, opts)
}

/// Supervised document-to-summary training.
pub fn finetune<S: AsRef<str>, T: AsRef<str>>(
    pairs: &[(S, T)],
    vocab: &Vocabulary,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    start: Start,
    opts: &RunOptions,
) -> Result<TrainOutcome, OptimError> {
    let source = FinetuneSource::new(pairs, vocab, model_cfg.max_positions);
    run_training(&source, model_cfg, train_cfg, start, opts)
}

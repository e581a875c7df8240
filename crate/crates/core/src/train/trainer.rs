use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{AdamW, AdamWConfig, Augment, Dataset, LrSchedule};
use crate::autograd::Tape;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::nn::{zero_grads, Ctx, Mode, Module};
use crate::tensor::{Element, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub min_lr: f64,
    pub warmup_epochs: usize,
    pub optimizer: AdamWConfig,
    pub augment: Augment,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 5,
            batch_size: 64,
            base_lr: 2.5e-4,
            min_lr: 0.0,
            warmup_epochs: 2,
            optimizer: AdamWConfig::default(),
            augment: Augment::FlipCrop,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochMetrics {
    pub loss: f64,
    pub top1: f64,
    /// Learning rate of the epoch's last step.
    pub lr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalMetrics {
    pub loss: f64,
    pub top1: f64,
}

/// Batch boundaries for `n` samples. A trailing single sample joins the
/// previous batch so batch statistics stay defined.
fn batch_ranges(n: usize, batch: usize) -> Vec<(usize, usize)> {
    let mut out: Vec<(usize, usize)> = (0..n).step_by(batch.max(1)).map(|s| (s, (s + batch).min(n))).collect();
    if out.len() > 1 && out.last().is_some_and(|&(s, e)| e - s == 1) {
        let (_, e) = out.pop().expect("nonempty");
        out.last_mut().expect("nonempty").1 = e;
    }
    out
}

fn correct<E: Element>(logits: &Tensor<E>, labels: &[usize]) -> usize {
    let k = logits.shape()[1];
    logits
        .data()
        .chunks(k)
        .zip(labels)
        .filter(|(row, &l)| {
            let best = row.iter().enumerate().fold(0, |b, (i, v)| if *v > row[b] { i } else { b });
            best == l
        })
        .count()
}

/// Eval-mode loss and accuracy. The model is not modified.
pub fn evaluate<E: Element>(model: &Model<E>, ds: &Dataset, batch_size: usize) -> Result<EvalMetrics> {
    if ds.is_empty() {
        return Err(Error::Empty("evaluation dataset has no samples".into()));
    }
    ds.check_labels(model.num_classes())?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (mut loss, mut hits) = (0.0, 0);
    for (s, e) in batch_ranges(ds.len(), batch_size) {
        let idx: Vec<usize> = (s..e).collect();
        let (x, y) = ds.batch::<E>(&idx, Augment::None, &mut rng);
        let tape = Tape::new();
        let ctx = Ctx::new(&tape, Mode::Eval);
        let logits = model.forward(&ctx, tape.constant(x))?;
        loss += logits.cross_entropy(&y)?.value().item().to_f64() * (e - s) as f64;
        hits += correct(&logits.value(), &y);
    }
    Ok(EvalMetrics { loss: loss / ds.len() as f64, top1: hits as f64 / ds.len() as f64 })
}

/// Owns the model and optimizer state across epochs.
pub struct Trainer<E: Element> {
    pub model: Model<E>,
    pub optimizer: AdamW<E>,
    pub config: TrainConfig,
    schedule: LrSchedule,
    step: usize,
    epoch: usize,
}

impl<E: Element> Trainer<E> {
    pub fn new(model: Model<E>, config: TrainConfig, train_len: usize) -> Result<Self> {
        if config.batch_size < 2 {
            return Err(Error::Config(format!("batch_size must be at least 2, got {}", config.batch_size)));
        }
        let steps = batch_ranges(train_len, config.batch_size).len();
        let schedule = LrSchedule::new(config.base_lr, config.min_lr, config.warmup_epochs, config.epochs, steps);
        Ok(Self { optimizer: AdamW::new(config.optimizer), model, config, schedule, step: 0, epoch: 0 })
    }

    pub fn schedule(&self) -> &LrSchedule {
        &self.schedule
    }

    /// Epochs completed so far.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    /// One shuffled pass with a forward, backward and optimizer step per
    /// batch. Returns the sample-weighted mean training loss and accuracy.
    pub fn train_epoch(&mut self, ds: &Dataset) -> Result<EpochMetrics> {
        if ds.len() < 2 {
            return Err(Error::Empty(format!("training needs at least 2 samples, got {}", ds.len())));
        }
        ds.check_labels(self.model.num_classes())?;
        let mut rng =
            ChaCha8Rng::seed_from_u64(self.config.seed.wrapping_mul(0x9e37_79b9).wrapping_add(self.epoch as u64));
        let mut order: Vec<usize> = (0..ds.len()).collect();
        order.shuffle(&mut rng);
        let (mut loss_sum, mut hits, mut lr) = (0.0, 0, 0.0);
        for (s, e) in batch_ranges(ds.len(), self.config.batch_size) {
            let (x, y) = ds.batch::<E>(&order[s..e], self.config.augment, &mut rng);
            lr = self.schedule.lr(self.step);
            let tape = Tape::new();
            let ctx = Ctx::new(&tape, Mode::Train);
            let logits = self.model.forward(&ctx, tape.constant(x))?;
            let loss = logits.cross_entropy(&y)?;
            tape.backward(loss)?;
            zero_grads(&mut self.model);
            ctx.commit(&mut self.model)?;
            self.optimizer.step(&mut self.model, lr)?;
            let l = loss.value().item().to_f64();
            if !l.is_finite() {
                return Err(Error::NonFinite(format!("training loss at step {}", self.step)));
            }
            loss_sum += l * (e - s) as f64;
            hits += correct(&logits.value(), &y);
            self.step += 1;
        }
        self.epoch += 1;
        if !self.model.all_finite() {
            return Err(Error::NonFinite(format!("parameters after epoch {}", self.epoch)));
        }
        Ok(EpochMetrics { loss: loss_sum / ds.len() as f64, top1: hits as f64 / ds.len() as f64, lr })
    }
}

/// Append-only `epoch,split,loss,top1,lr` CSV.
pub struct MetricsLog {
    path: PathBuf,
}

impl MetricsLog {
    pub const HEADER: &'static str = "epoch,split,loss,top1,lr";

    /// Opens `path`, writing the header if the file is new or empty.
    pub fn open(path: &Path) -> Result<Self> {
        let fresh = std::fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
        if fresh {
            std::fs::write(path, format!("{}\n", Self::HEADER)).map_err(|e| Error::io(path, e))?;
        }
        Ok(Self { path: path.to_path_buf() })
    }

    pub fn append(&self, epoch: usize, split: &str, loss: f64, top1: f64, lr: f64) -> Result<()> {
        let mut f = OpenOptions::new().append(true).open(&self.path).map_err(|e| Error::io(&self.path, e))?;
        writeln!(f, "{epoch},{split},{loss},{top1},{lr}").map_err(|e| Error::io(&self.path, e))
    }
}

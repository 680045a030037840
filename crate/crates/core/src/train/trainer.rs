use std::fs;
use std::path::Path;
use std::time::Instant;

use log::info;

use super::checkpoint::{Checkpoint, TrainState};
use super::config::TrainConfig;
use super::metrics::{read_metrics, CsvLog, MetricsRow, GRAD_NORMS_HEADER, METRICS_HEADER};
use crate::data::{batches, channel_stats, BatchOptions, Dataset, NormStats};
use crate::error::{Error, Result};
use crate::model::{count_params, Model};
use crate::ops::{argmax_rows, softmax_cross_entropy};
use crate::optim::{clip_store_grad_norm, global_norm, Lookahead, LrSchedule, Optimizer};
use crate::rng::{streams, RngStream};
use crate::tensor::Mode;

pub const METRICS_FILE: &str = "metrics.csv";
pub const GRAD_NORMS_FILE: &str = "grad_norms.csv";
pub const LAST_CHECKPOINT: &str = "last.ckpt";
pub const BEST_CHECKPOINT: &str = "best.ckpt";

/// Phases of one optimisation step, reported in the order they happen.
#[derive(Clone, Debug, PartialEq)]
pub enum StepEvent {
    Forward,
    Loss(f64),
    Backward,
    Clip { pre_norm: f64, post_norm: f64 },
    OptimizerStep { lr: f64 },
    Lookahead { synced: bool },
}

/// Hook called after every phase of every training step.
pub trait StepObserver {
    /// `epoch` and `step` are 0-based.
    fn on_event(&mut self, epoch: usize, step: usize, event: &StepEvent);
}

/// Mean cross-entropy and top-1 accuracy in eval mode.
pub fn evaluate(model: &mut Model<f32>, dataset: &Dataset, stats: &NormStats, batch_size: usize) -> Result<(f64, f64)> {
    let mut rng = RngStream::new(0);
    let mut loss_sum = 0.0;
    let mut correct = 0usize;
    for batch in batches(dataset, BatchOptions::eval(batch_size), stats, &mut rng)? {
        let logits = model.forward(&batch.images, Mode::Eval, None)?;
        let (loss, _) = softmax_cross_entropy(&logits, &batch.labels)?;
        loss_sum += loss as f64 * batch.labels.len() as f64;
        correct += argmax_rows(&logits)?
            .iter()
            .zip(&batch.labels)
            .filter(|(a, b)| a == b)
            .count();
    }
    let n = dataset.len() as f64;
    Ok((loss_sum / n, correct as f64 / n))
}

pub struct Trainer {
    config: TrainConfig,
    model: Model<f32>,
    optimizer: Optimizer<f32>,
    lookahead: Option<Lookahead<f32>>,
    stats: NormStats,
    data_rng: RngStream,
    dropout_rng: RngStream,
    epoch: usize,
    best_test_acc: f64,
    best_epoch: usize,
    observer: Option<Box<dyn StepObserver>>,
}

impl Trainer {
    /// Builds and initialises the model, checks the parameter budget and
    /// computes normalisation statistics from `train`.
    pub fn new(config: TrainConfig, train: &Dataset) -> Result<Self> {
        config.validate()?;
        let total = count_params(&config.model)?;
        if let Some(budget) = config.param_budget {
            if total >= budget {
                return Err(Error::config(format!(
                    "model has {total} parameters, over the budget of {budget}"
                )));
            }
        }
        let stats = if config.normalize {
            channel_stats(train)?
        } else {
            NormStats::identity()
        };
        let mut init_rng = RngStream::with_stream(config.seed, streams::INIT);
        let model = Model::build(&config.model, &config.init, &mut init_rng)?;
        let optimizer = Optimizer::new(config.optimizer.clone(), model.params())?;
        let lookahead = config
            .lookahead
            .enabled
            .then(|| Lookahead::new(model.params(), config.lookahead.k, config.lookahead.alpha))
            .transpose()?;
        info!("built model with {total} parameters");
        Ok(Self {
            data_rng: RngStream::with_stream(config.seed, streams::DATA),
            dropout_rng: RngStream::with_stream(config.seed, streams::DROPOUT),
            config,
            model,
            optimizer,
            lookahead,
            stats,
            epoch: 0,
            best_test_acc: -1.0,
            best_epoch: 0,
            observer: None,
        })
    }

    /// Continues a run exactly where `ckpt` left it.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let config = ckpt.config.clone();
        let mut model = Model::build_zeroed(&config.model)?;
        let mut optimizer = Optimizer::new(config.optimizer.clone(), model.params())?;
        let mut lookahead = config
            .lookahead
            .enabled
            .then(|| Lookahead::new(model.params(), config.lookahead.k, config.lookahead.alpha))
            .transpose()?;
        ckpt.restore(&mut model, &mut optimizer, lookahead.as_mut())?;
        let s = &ckpt.state;
        Ok(Self {
            config,
            model,
            optimizer,
            lookahead,
            stats: s.norm,
            data_rng: RngStream::from_state(s.data_rng),
            dropout_rng: RngStream::from_state(s.dropout_rng),
            epoch: s.epoch as usize,
            best_test_acc: s.best_test_acc,
            best_epoch: s.best_epoch as usize,
            observer: None,
        })
    }

    pub fn set_observer(&mut self, observer: Box<dyn StepObserver>) {
        self.observer = Some(observer);
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn model(&self) -> &Model<f32> {
        &self.model
    }

    pub fn model_mut(&mut self) -> &mut Model<f32> {
        &mut self.model
    }

    pub fn stats(&self) -> &NormStats {
        &self.stats
    }

    /// Completed epochs.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let state = TrainState {
            epoch: self.epoch as u64,
            optimizer_step: self.optimizer.step_count(),
            lookahead_counter: self.lookahead.as_ref().map_or(0, |l| l.counter()),
            data_rng: self.data_rng.state(),
            dropout_rng: self.dropout_rng.state(),
            best_test_acc: self.best_test_acc,
            best_epoch: self.best_epoch as u64,
            norm: self.stats,
        };
        Checkpoint::capture(&self.config, state, &self.model, &self.optimizer, self.lookahead.as_ref())
    }

    fn schedule(&self, train: &Dataset) -> Result<LrSchedule> {
        let steps = train.len().div_ceil(self.config.batch_size);
        self.config
            .scheduler
            .resolve(self.optimizer.config().lr, self.config.epochs, steps)
    }

    fn emit(&mut self, step: usize, event: StepEvent) {
        if let Some(o) = self.observer.as_mut() {
            o.on_event(self.epoch, step, &event);
        }
    }

    /// One pass over `train`. Returns mean loss, accuracy and the last
    /// learning rate used.
    pub fn train_epoch(&mut self, train: &Dataset, mut grad_log: Option<&mut CsvLog>) -> Result<(f64, f64, f64)> {
        let schedule = self.schedule(train)?;
        let steps_per_epoch = train.len().div_ceil(self.config.batch_size);
        if !schedule.schedule.per_batch() {
            self.optimizer.set_lr(schedule.lr_at(self.epoch)?);
        }
        let options = BatchOptions {
            batch_size: self.config.batch_size,
            shuffle: true,
            augment: self.config.augment,
            workers: self.config.workers,
        };
        let mut rng = self.data_rng.clone();
        let iter = batches(train, options, &self.stats, &mut rng)?;
        self.data_rng = rng;

        let (mut loss_sum, mut correct) = (0.0f64, 0usize);
        for (step, batch) in iter.enumerate() {
            if schedule.schedule.per_batch() {
                self.optimizer.set_lr(schedule.lr_at(self.epoch * steps_per_epoch + step)?);
            }
            self.model.zero_grads();
            let logits = self.model.forward(&batch.images, Mode::Train, Some(&mut self.dropout_rng))?;
            self.emit(step, StepEvent::Forward);
            let (loss, grad) = softmax_cross_entropy(&logits, &batch.labels)?;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!(
                    "loss is {loss} at epoch {} step {}",
                    self.epoch + 1,
                    step + 1
                )));
            }
            self.emit(step, StepEvent::Loss(loss as f64));
            self.model.backward(&grad)?;
            self.emit(step, StepEvent::Backward);
            if let Some(c) = self.config.grad_clip {
                let pre_norm = clip_store_grad_norm(self.model.params_mut(), c).map_err(|e| {
                    Error::Numeric(format!("epoch {} step {}: {e}", self.epoch + 1, step + 1))
                })?;
                let post_norm = global_norm(&self.model.params_mut().grads_mut());
                if let Some(log) = grad_log.as_deref_mut() {
                    log.append(&format!("{},{},{pre_norm},{post_norm}", self.epoch + 1, step + 1))?;
                }
                self.emit(step, StepEvent::Clip { pre_norm, post_norm });
            }
            self.optimizer.step(self.model.params_mut())?;
            let lr = self.optimizer.lr();
            self.emit(step, StepEvent::OptimizerStep { lr });
            if let Some(la) = self.lookahead.as_mut() {
                let synced = la.step(self.model.params_mut());
                self.emit(step, StepEvent::Lookahead { synced });
            }
            loss_sum += loss as f64 * batch.labels.len() as f64;
            correct += argmax_rows(&logits)?
                .iter()
                .zip(&batch.labels)
                .filter(|(a, b)| a == b)
                .count();
        }
        let n = train.len() as f64;
        Ok((loss_sum / n, correct as f64 / n, self.optimizer.lr()))
    }

    /// Trains the remaining epochs.
    pub fn fit(&mut self, train: &Dataset, test: &Dataset, out_dir: &Path) -> Result<Vec<MetricsRow>> {
        self.fit_until(train, test, out_dir, self.config.epochs)
    }

    /// Trains until `stop` epochs are complete (capped at the configured
    /// count), writing metrics and checkpoints into `out_dir` after every
    /// epoch. Rows already on disk for completed epochs are kept.
    pub fn fit_until(&mut self, train: &Dataset, test: &Dataset, out_dir: &Path, stop: usize) -> Result<Vec<MetricsRow>> {
        fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
        let done = self.epoch;
        let metrics_path = out_dir.join(METRICS_FILE);
        let mut rows: Vec<MetricsRow> = if done > 0 && metrics_path.exists() {
            read_metrics(&metrics_path)?.into_iter().filter(|r| r.epoch <= done).collect()
        } else {
            Vec::new()
        };
        let kept: Vec<String> = rows.iter().map(MetricsRow::to_csv).collect();
        let mut metrics = CsvLog::create(&metrics_path, METRICS_HEADER, &kept)?;
        let mut grad_log = match self.config.grad_clip {
            Some(_) => {
                let path = out_dir.join(GRAD_NORMS_FILE);
                let kept = kept_grad_rows(&path, done)?;
                Some(CsvLog::create(&path, GRAD_NORMS_HEADER, &kept)?)
            }
            None => None,
        };

        for epoch in done..stop.min(self.config.epochs) {
            let start = Instant::now();
            let (train_loss, train_acc, lr) = self.train_epoch(train, grad_log.as_mut())?;
            let (test_loss, test_acc) = evaluate(&mut self.model, test, &self.stats, self.config.batch_size)?;
            self.epoch = epoch + 1;
            let row = MetricsRow {
                epoch: epoch + 1,
                train_loss,
                train_acc,
                test_loss,
                test_acc,
                lr,
                wall_seconds: if self.config.timing {
                    start.elapsed().as_secs_f64()
                } else {
                    0.0
                },
            };
            metrics.append(&row.to_csv())?;
            info!(
                "epoch {}: train loss {train_loss:.4} acc {train_acc:.4}, test loss {test_loss:.4} acc {test_acc:.4}",
                epoch + 1
            );
            let improved = test_acc > self.best_test_acc;
            if improved {
                self.best_test_acc = test_acc;
                self.best_epoch = epoch + 1;
            }
            let ckpt = self.checkpoint();
            ckpt.save(&out_dir.join(LAST_CHECKPOINT))?;
            if improved {
                ckpt.save(&out_dir.join(BEST_CHECKPOINT))?;
            }
            rows.push(row);
        }
        Ok(rows)
    }
}

fn kept_grad_rows(path: &Path, done: usize) -> Result<Vec<String>> {
    if done == 0 || !path.exists() {
        return Ok(Vec::new());
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .skip(1)
        .filter(|l| {
            l.split(',')
                .next()
                .and_then(|e| e.parse::<usize>().ok())
                .is_some_and(|e| e <= done)
        })
        .map(str::to_string)
        .collect())
}

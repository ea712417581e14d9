//! Initialization, the minibatch training loop, loss history and checkpoints.

mod checkpoint;
mod optim;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta, CHECKPOINT_CONFIG};
pub use optim::{sgd_step, AdamParams, OptimizerKind, OptimizerState};

use std::path::Path;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{config_err, Error, Result};
use crate::fsutil::write_atomic;
use crate::model::{Init, Model, Variant};
use crate::rng::substream;
use crate::tensor::{BatchNormMode, Tape};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub iterations: usize,
    pub seed: u64,
    /// Write a checkpoint every this many iterations (0 disables).
    pub checkpoint_interval: usize,
    pub optimizer: OptimizerKind,
    pub adam: AdamParams,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 16,
            iterations: 2000,
            seed: 0,
            checkpoint_interval: 0,
            optimizer: OptimizerKind::Adam,
            adam: AdamParams::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return config_err(format!("learning rate must be finite and nonnegative, got {}", self.learning_rate));
        }
        if self.batch_size < 2 {
            return config_err("batch size must be at least 2 for batch normalization");
        }
        let a = &self.adam;
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || !(a.eps > 0.0) {
            return config_err("adam needs beta1, beta2 in [0, 1) and eps > 0");
        }
        Ok(())
    }
}

/// Fills every model tensor according to its initialization rule, drawing
/// Gaussian weights from the seed's `init` substream in creation order.
pub fn init_params(model: &mut Model, seed: u64) {
    let mut rng = substream(seed, "init", 0);
    let rules = model.init_rules().to_vec();
    let store = model.store_mut();
    for (id, init) in rules {
        let data = store.value_mut(id).data_mut();
        match init {
            Init::Zeros => data.fill(0.0),
            Init::Ones => data.fill(1.0),
            Init::HeNormal { fan_in } => {
                let std = (2.0 / fan_in as f64).sqrt();
                for v in data {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    *v = std * z;
                }
            }
        }
    }
}

/// Losses after one update; absent entries were not computed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRecord {
    pub iteration: usize,
    pub classification: Option<f64>,
    pub regression: Option<f64>,
    pub total: f64,
}

/// Seeded minibatch order over a multiset of sample indices: each epoch is
/// a fresh permutation and batches run across epoch boundaries.
#[derive(Clone, Debug)]
pub struct BatchSampler {
    pool: Vec<usize>,
    seed: u64,
    epoch: u64,
    order: Vec<usize>,
    cursor: usize,
    batches_in_epoch: usize,
}

impl BatchSampler {
    pub fn new(pool: Vec<usize>, seed: u64) -> Result<Self> {
        if pool.is_empty() {
            return Err(Error::Data("no training samples".into()));
        }
        let mut s = Self {
            pool,
            seed,
            epoch: 0,
            order: Vec::new(),
            cursor: 0,
            batches_in_epoch: 0,
        };
        s.reshuffle();
        Ok(s)
    }

    fn reshuffle(&mut self) {
        self.order = self.pool.clone();
        self.order.shuffle(&mut substream(self.seed, "shuffle", self.epoch));
        self.cursor = 0;
        self.batches_in_epoch = 0;
    }

    /// Next `size` sample indices and the batch's ordinal within its epoch.
    pub fn next_batch(&mut self, size: usize) -> (Vec<usize>, usize) {
        let id = self.batches_in_epoch;
        let mut out = Vec::with_capacity(size);
        while out.len() < size {
            if self.cursor == self.order.len() {
                self.epoch += 1;
                self.reshuffle();
            }
            out.push(self.order[self.cursor]);
            self.cursor += 1;
        }
        self.batches_in_epoch += 1;
        (out, id)
    }
}

/// Trains `model` on the rebalanced training split that excludes fold
/// `held_out`. With `checkpoint_dir`, a checkpoint is written every
/// `checkpoint_interval` iterations and after the last one.
pub fn train(
    model: &mut Model,
    dataset: &Dataset,
    held_out: usize,
    config: &TrainConfig,
    checkpoint_dir: Option<&Path>,
) -> Result<Vec<LossRecord>> {
    config.validate()?;
    let split = dataset.split(held_out)?.clone();
    let mut sampler = BatchSampler::new(split.train_samples.clone(), config.seed)?;
    let mut optimizer = OptimizerState::new(model.store(), config.optimizer, config.adam);
    let mut history = Vec::with_capacity(config.iterations);
    for iteration in 1..=config.iterations {
        let (indices, batch_id) = sampler.next_batch(config.batch_size);
        let batch = dataset.batch(&indices, &split.normalization)?;
        let mut tape = Tape::new();
        let losses = model.loss(&mut tape, &batch, BatchNormMode::Train)?;
        let total = tape.value(losses.total).item()?;
        if !total.is_finite() {
            return Err(Error::NonFiniteLoss {
                iteration,
                batch: batch_id,
            });
        }
        let record = LossRecord {
            iteration,
            classification: losses.classification.map(|v| tape.value(v).data()[0]),
            regression: losses.regression.map(|v| tape.value(v).data()[0]),
            total,
        };
        tape.backward(losses.total, model.store_mut())?;
        sgd_step(model.store_mut(), &mut optimizer, config.learning_rate)?;
        history.push(record);
        if iteration % 50 == 0 || iteration == config.iterations {
            log::info!("iteration {iteration}/{}: loss {total:.5}", config.iterations);
        }
        if let Some(dir) = checkpoint_dir {
            if config.checkpoint_interval > 0 && iteration % config.checkpoint_interval == 0 {
                save_checkpoint(&dir.join(format!("iter_{iteration:06}")), model, &split.normalization, held_out, iteration)?;
            }
        }
    }
    if let Some(dir) = checkpoint_dir {
        save_checkpoint(dir, model, &split.normalization, held_out, config.iterations)?;
    }
    Ok(history)
}

/// Loss-history columns written for a variant.
pub fn loss_columns(variant: Variant) -> &'static [&'static str] {
    match variant {
        Variant::SingleCls | Variant::TwoStreamCls => &["iteration", "L_c"],
        Variant::SingleReg | Variant::TwoStreamReg => &["iteration", "L_r"],
        Variant::Tsmt => &["iteration", "L_c", "L_r", "L_all"],
    }
}

/// Loss history as CSV text. Losses that were not computed (a zero-weighted
/// head) are left empty.
pub fn loss_csv(variant: Variant, history: &[LossRecord]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let cols = loss_columns(variant);
    w.write_record(cols)?;
    let fmt = |v: Option<f64>| v.map(|x| format!("{x:e}")).unwrap_or_default();
    for r in history {
        let row = match variant {
            Variant::SingleCls | Variant::TwoStreamCls => vec![r.iteration.to_string(), fmt(r.classification)],
            Variant::SingleReg | Variant::TwoStreamReg => vec![r.iteration.to_string(), fmt(r.regression)],
            Variant::Tsmt => vec![
                r.iteration.to_string(),
                fmt(r.classification),
                fmt(r.regression),
                fmt(Some(r.total)),
            ],
        };
        w.write_record(&row)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv writer emits utf-8"))
}

pub fn write_loss_csv(path: &Path, variant: Variant, history: &[LossRecord]) -> Result<()> {
    write_atomic(path, loss_csv(variant, history)?.as_bytes())
}

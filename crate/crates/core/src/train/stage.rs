//! Epoch loops for pre-training and fine-tuning one network.

use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::LossKind;
use super::optim::{update_lr, AdamState};
use crate::error::{Error, Result};
use crate::nets::{Architecture, Network};
use crate::params::ParamStore;
use crate::scalar::Real;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr0: f64,
    pub decay_factor: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Training fraction when a validation split has to be carved out.
    pub split: f64,
    /// `None` picks MSE for the Denoiser and MAE for the Inverter.
    pub loss: Option<LossKind>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr0: 0.001,
            decay_factor: 0.98,
            epochs: 100,
            batch_size: 2,
            split: 0.9,
            loss: None,
            seed: 0,
        }
    }
}

fn check_schedule(prefix: &str, lr0: f64, decay: f64, batch: usize, split: f64) -> Result<()> {
    if !(lr0 > 0.0 && lr0.is_finite()) {
        return Err(Error::InvalidConfig(format!("{prefix}.lr0 must be positive")));
    }
    if !(decay > 0.0 && decay <= 1.0) {
        return Err(Error::InvalidConfig(format!("{prefix}.decay_factor must be in (0, 1]")));
    }
    if batch == 0 {
        return Err(Error::InvalidConfig(format!("{prefix}.batch_size must be >= 1")));
    }
    if !(split > 0.0 && split < 1.0) {
        return Err(Error::InvalidConfig(format!("{prefix}.split must be in (0, 1)")));
    }
    Ok(())
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        check_schedule("train", self.lr0, self.decay_factor, self.batch_size, self.split)
    }

    pub fn loss_for(&self, arch: &Architecture) -> LossKind {
        self.loss.unwrap_or(match arch {
            Architecture::Denoiser(_) => LossKind::Mse,
            Architecture::Inverter(_) => LossKind::Mae,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FineTuneConfig {
    pub lr0: f64,
    pub decay_factor: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub split: f64,
    pub loss: Option<LossKind>,
    pub seed: u64,
}

impl Default for FineTuneConfig {
    fn default() -> Self {
        Self {
            lr0: 0.0006,
            decay_factor: 0.99,
            epochs: 100,
            batch_size: 2,
            split: 0.9,
            loss: None,
            seed: 0,
        }
    }
}

impl FineTuneConfig {
    pub fn validate(&self) -> Result<()> {
        check_schedule("fine_tune", self.lr0, self.decay_factor, self.batch_size, self.split)
    }

    pub fn as_train(&self) -> TrainConfig {
        TrainConfig {
            lr0: self.lr0,
            decay_factor: self.decay_factor,
            epochs: self.epochs,
            batch_size: self.batch_size,
            split: self.split,
            loss: self.loss,
            seed: self.seed,
        }
    }
}

/// Input volume and its regression target.
#[derive(Debug, Clone, PartialEq)]
pub struct Pair<T> {
    pub input: Tensor<T>,
    pub target: Tensor<T>,
}

/// Deterministic shuffle of `0..n` split into `(train, val)`; both sides
/// get at least one index.
pub fn split_indices(n: usize, split: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if n < 2 {
        return Err(Error::InvalidConfig(format!("need at least 2 samples to split, got {n}")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let k = (libm::round(n as f64 * split) as usize).clamp(1, n - 1);
    let val = idx.split_off(k);
    Ok((idx, val))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Rate used during this epoch.
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub history: Vec<EpochRecord>,
    /// 0 when no epoch ran.
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub best_params: ParamStore<T>,
    pub optimizer: AdamState<T>,
    /// Rate the next epoch would use.
    pub next_lr: f64,
}

/// Mean loss of inference-mode predictions.
pub fn mean_loss<T: Real, N: Network<T>>(net: &N, data: &[Pair<T>], loss: LossKind) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::InvalidConfig("empty evaluation split".into()));
    }
    let mut total = 0.0;
    for p in data {
        total += loss.value(&net.forward_infer(&p.input)?, &p.target)?.as_f64();
    }
    Ok(total / data.len() as f64)
}

/// Trains `net` on `train`, tracking validation loss each epoch. On
/// return `net` holds the parameters with the lowest validation loss, or
/// its initial parameters when `epochs` is 0.
pub fn train_stage<T: Real, N: Network<T>>(
    net: &mut N,
    train: &[Pair<T>],
    val: &[Pair<T>],
    cfg: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::InvalidConfig("training and validation splits must be non-empty".into()));
    }
    let loss = cfg.loss_for(&net.architecture());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut optimizer = AdamState::new(net.params());
    let mut lr = cfg.lr0;
    let mut best_val_loss = f64::INFINITY;
    let mut best_params = net.params().clone();
    let mut best_epoch = 0;
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut train_losses = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let inputs: Vec<Tensor<T>> = chunk.iter().map(|&i| train[i].input.clone()).collect();
            net.params_mut().zero_grads();
            let (outputs, cache) = net.forward_train(&inputs)?;
            let scale = T::of(1.0 / chunk.len() as f64);
            let mut grads = Vec::with_capacity(chunk.len());
            for (out, &i) in outputs.iter().zip(chunk) {
                let (value, g) = loss.value_and_grad(out, &train[i].target)?;
                total += value.as_f64();
                grads.push(g.scale(scale));
            }
            net.backward(cache, &grads, false)?;
            optimizer.step(net.params_mut(), lr)?;
        }
        let train_loss = total / train.len() as f64;
        let val_loss = mean_loss(net, val, loss)?;
        if !(train_loss.is_finite() && val_loss.is_finite()) {
            return Err(Error::NonFinite(format!(
                "epoch {epoch}: train loss {train_loss}, validation loss {val_loss}"
            )));
        }
        let record = EpochRecord { epoch, lr, train_loss, val_loss };
        on_epoch(&record);
        history.push(record);
        if val_loss < best_val_loss {
            best_val_loss = val_loss;
            best_params = net.params().clone();
            best_epoch = epoch;
        }
        train_losses.push(train_loss);
        lr = update_lr(lr, &train_losses, cfg.decay_factor);
    }
    net.params_mut().copy_values_from(&best_params)?;
    Ok(TrainOutcome {
        history,
        best_epoch,
        best_val_loss,
        best_params,
        optimizer,
        next_lr: lr,
    })
}

/// Starts from pre-trained parameters and continues with the fine-tuning
/// schedule.
pub fn fine_tune<T: Real, N: Network<T>>(
    net: &mut N,
    source: (&Architecture, &ParamStore<T>),
    train: &[Pair<T>],
    val: &[Pair<T>],
    cfg: &FineTuneConfig,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    let (arch, params) = source;
    if *arch != net.architecture() {
        return Err(Error::ArchitectureMismatch(format!(
            "checkpoint holds {arch:?}, network is {:?}",
            net.architecture()
        )));
    }
    net.params_mut().copy_values_from(params)?;
    train_stage(net, train, val, &cfg.as_train(), on_epoch)
}

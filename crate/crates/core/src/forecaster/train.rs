//! Mini-batch training with MSE loss and Adam.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::lstm::{BatchWorkspace, ForwardCache, LstmWeights};
use super::{ForecastError, ForecastModel, Hyperparameters, SupervisedWindow};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    /// Epochs without validation improvement before stopping; `0` disables.
    pub patience: usize,
    pub incremental_epochs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { batch_size: 32, epochs: 50, patience: 5, incremental_epochs: 10 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    /// Epoch (1-based) whose weights were kept; 0 means the starting weights.
    pub best_epoch: usize,
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;
/// Units at which a batch is split into parallel chunks.
const PARALLEL_UNITS: usize = 32;
const BATCH_CHUNKS: usize = 4;

struct Adam {
    m: LstmWeights,
    v: LstmWeights,
    t: i32,
    lr: f64,
}

impl Adam {
    fn new(shape: &LstmWeights, lr: f64) -> Self {
        Self {
            m: LstmWeights::zeros(shape.n_units, shape.horizon),
            v: LstmWeights::zeros(shape.n_units, shape.horizon),
            t: 0,
            lr,
        }
    }

    fn step(&mut self, params: &mut LstmWeights, grads: &LstmWeights) {
        self.t += 1;
        let c1 = 1.0 - ADAM_BETA1.powi(self.t);
        let c2 = 1.0 - ADAM_BETA2.powi(self.t);
        let gs = grads.tensors();
        for ((((_, p), (_, m)), (_, v)), (_, g)) in params
            .tensors_mut()
            .into_iter()
            .zip(self.m.tensors_mut())
            .zip(self.v.tensors_mut())
            .zip(gs)
        {
            for j in 0..p.len() {
                m[j] = ADAM_BETA1 * m[j] + (1.0 - ADAM_BETA1) * g[j];
                v[j] = ADAM_BETA2 * v[j] + (1.0 - ADAM_BETA2) * g[j] * g[j];
                p[j] -= self.lr * (m[j] / c1) / ((v[j] / c2).sqrt() + ADAM_EPS);
            }
        }
    }
}

fn add_into(acc: &mut LstmWeights, other: &LstmWeights) {
    for ((_, a), (_, b)) in acc.tensors_mut().into_iter().zip(other.tensors()) {
        a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
    }
}

/// Mean over windows of the per-window mean squared error; dropout off.
pub fn mse_loss(weights: &LstmWeights, windows: &[SupervisedWindow]) -> f64 {
    if windows.is_empty() {
        return 0.0;
    }
    let mut cache = ForwardCache::default();
    let total: f64 = windows
        .iter()
        .map(|w| {
            weights.forward(&w.input, None, &mut cache);
            sq_err(&cache.y, &w.target)
        })
        .sum();
    total / windows.len() as f64
}

fn sq_err(y: &[f64], t: &[f64]) -> f64 {
    y.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / y.len() as f64
}

/// Forward and backward over `items`, accumulating gradients of
/// `scale * sum of per-window MSE` into `ws.grads`. Returns the summed MSE.
fn accumulate(
    weights: &LstmWeights,
    items: &[(&SupervisedWindow, Option<Vec<f64>>)],
    scale: f64,
    ws: &mut BatchWorkspace,
) -> f64 {
    let mut loss = 0.0;
    for (w, mask) in items {
        let mask = mask.as_deref();
        weights.forward(&w.input, mask, &mut ws.cache);
        let h = w.target.len() as f64;
        loss += sq_err(&ws.cache.y, &w.target);
        for (j, d) in ws.dy.iter_mut().enumerate() {
            *d = scale * 2.0 * (ws.cache.y[j] - w.target[j]) / h;
        }
        weights.backward(&ws.cache, mask, &ws.dy, &mut ws.grads);
    }
    loss
}

/// Gradient of the batch-mean MSE. The chunking depends only on the batch and
/// model size, so the floating-point summation order is fixed.
fn batch_gradient(
    weights: &LstmWeights,
    items: &[(&SupervisedWindow, Option<Vec<f64>>)],
    ws: &mut BatchWorkspace,
) -> f64 {
    let scale = 1.0 / items.len() as f64;
    ws.zero_grads();
    if weights.n_units < PARALLEL_UNITS || items.len() < BATCH_CHUNKS {
        return accumulate(weights, items, scale, ws) * scale;
    }
    let chunk = items.len().div_ceil(BATCH_CHUNKS);
    let parts: Vec<(f64, LstmWeights)> = items
        .par_chunks(chunk)
        .map(|c| {
            let mut local = BatchWorkspace::new(weights.n_units, weights.horizon);
            let l = accumulate(weights, c, scale, &mut local);
            (l, local.grads)
        })
        .collect();
    let mut loss = 0.0;
    for (l, g) in &parts {
        loss += l;
        add_into(&mut ws.grads, g);
    }
    loss * scale
}

fn check_windows(model: &ForecastModel, windows: &[SupervisedWindow]) -> Result<(), ForecastError> {
    for w in windows {
        if w.input.len() != model.input_len {
            return Err(ForecastError::InputLength { expected: model.input_len, got: w.input.len() });
        }
        if w.target.len() != model.horizon {
            return Err(ForecastError::InputLength { expected: model.horizon, got: w.target.len() });
        }
        if w.input.iter().chain(&w.target).any(|v| !v.is_finite()) {
            return Err(ForecastError::NonFiniteInput);
        }
    }
    Ok(())
}

/// Runs `epochs` passes of shuffled mini-batch Adam from the model's current
/// weights. With a validation set, the best-validation weights are kept and
/// training stops after `patience` epochs without improvement.
fn fit(
    model: &ForecastModel,
    hp: &Hyperparameters,
    windows: &[SupervisedWindow],
    val_windows: &[SupervisedWindow],
    epochs: usize,
    cfg: &TrainConfig,
) -> Result<(LstmWeights, TrainHistory), ForecastError> {
    let mut weights = model.weights.clone();
    let mut adam = Adam::new(&weights, hp.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(model.rng_seed);
    rng.set_stream(model.version + 1);
    let keep = 1.0 - hp.dropout_rate;
    let n = weights.n_units;
    let batch_size = cfg.batch_size.max(1);
    let mut ws = BatchWorkspace::new(n, weights.horizon);
    let mut order: Vec<usize> = (0..windows.len()).collect();

    let mut history = TrainHistory::default();
    let use_val = !val_windows.is_empty();
    let mut best = (f64::INFINITY, weights.clone());
    if use_val {
        best.0 = mse_loss(&weights, val_windows);
        if !best.0.is_finite() {
            return Err(ForecastError::DivergedLoss { epoch: 0 });
        }
    }
    let mut stale = 0;

    for epoch in 1..=epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(batch_size) {
            let items: Vec<(&SupervisedWindow, Option<Vec<f64>>)> = batch
                .iter()
                .map(|&i| {
                    let mask = (hp.dropout_rate > 0.0).then(|| {
                        (0..n)
                            .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
                            .collect()
                    });
                    (&windows[i], mask)
                })
                .collect();
            let loss = batch_gradient(&weights, &items, &mut ws);
            if !loss.is_finite() {
                return Err(ForecastError::DivergedLoss { epoch });
            }
            epoch_loss += loss * batch.len() as f64;
            adam.step(&mut weights, &ws.grads);
        }
        if !weights.all_finite() {
            return Err(ForecastError::DivergedLoss { epoch });
        }
        history.train_loss.push(epoch_loss / windows.len() as f64);
        if use_val {
            let v = mse_loss(&weights, val_windows);
            if !v.is_finite() {
                return Err(ForecastError::DivergedLoss { epoch });
            }
            history.val_loss.push(v);
            if v < best.0 {
                best = (v, weights.clone());
                history.best_epoch = epoch;
                stale = 0;
            } else {
                stale += 1;
                if cfg.patience > 0 && stale >= cfg.patience {
                    break;
                }
            }
        }
    }
    if use_val {
        Ok((best.1, history))
    } else {
        history.best_epoch = history.train_loss.len();
        Ok((weights, history))
    }
}

/// Trains from the model's current weights and returns the best-validation
/// model. The version is left unchanged.
pub fn train(
    model: &ForecastModel,
    windows: &[SupervisedWindow],
    val_windows: &[SupervisedWindow],
    epochs: usize,
    cfg: &TrainConfig,
) -> Result<(ForecastModel, TrainHistory), ForecastError> {
    if windows.is_empty() {
        return Err(ForecastError::EmptyTrainingSet);
    }
    check_windows(model, windows)?;
    check_windows(model, val_windows)?;
    let (weights, history) = fit(model, &model.hyperparameters, windows, val_windows, epochs, cfg)?;
    Ok((ForecastModel { weights, ..model.clone() }, history))
}

/// Continues training from the stored weights on `new_windows` only, with the
/// tuned learning and dropout rates. An empty batch returns the model as is.
pub fn incremental_update(
    model: &ForecastModel,
    new_windows: &[SupervisedWindow],
    tuned: &Hyperparameters,
    epochs: usize,
    cfg: &TrainConfig,
) -> Result<ForecastModel, ForecastError> {
    if new_windows.is_empty() {
        return Ok(model.clone());
    }
    tuned.validate()?;
    if tuned.n_units != model.hyperparameters.n_units {
        return Err(ForecastError::StructuralChange { from: model.hyperparameters.n_units, to: tuned.n_units });
    }
    check_windows(model, new_windows)?;
    let (weights, _) = fit(model, tuned, new_windows, &[], epochs, cfg)?;
    Ok(ForecastModel {
        weights,
        hyperparameters: *tuned,
        version: model.version + 1,
        ..model.clone()
    })
}

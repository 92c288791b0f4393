use ndarray::{s, Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::loss::weighted_dc_loss_grad;
use super::network::EmbeddingNetwork;
use super::DcError;
use crate::rng::{derive_seed, rng_for, stream_id};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub max_frames: usize,
    pub initial_lr: f64,
    pub plateau_patience: usize,
    pub lr_decay: f64,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self { epochs: 100, batch_size: 40, max_frames: 400, initial_lr: 1e-3, plateau_patience: 5, lr_decay: 0.5, seed: 0 }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<(), DcError> {
        let bad = |m: &str| Err(DcError::InvalidConfig(m.into()));
        if self.epochs == 0 || self.batch_size == 0 || self.max_frames == 0 || self.plateau_patience == 0 {
            return bad("epochs, batch_size, max_frames and plateau_patience must be positive");
        }
        if !(self.initial_lr > 0.0) || !self.initial_lr.is_finite() {
            return bad("initial_lr must be positive");
        }
        if !(self.lr_decay > 0.0 && self.lr_decay < 1.0) {
            return bad("lr_decay must lie in (0, 1)");
        }
        Ok(())
    }
}

/// One utterance: `T x F` network input with per-bin labels and weights in
/// row-major `(t, f)` order.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample {
    pub features: Array2<f64>,
    pub labels: Vec<usize>,
    pub weights: Vec<f64>,
}

impl TrainingExample {
    pub fn new(features: Array2<f64>, labels: Vec<usize>, weights: Vec<f64>) -> Result<Self, DcError> {
        let bins = features.len();
        if labels.len() != bins || weights.len() != bins {
            return Err(DcError::ShapeMismatch(format!(
                "{bins} bins, {} labels, {} weights",
                labels.len(),
                weights.len()
            )));
        }
        Ok(Self { features, labels, weights })
    }

    pub fn num_frames(&self) -> usize {
        self.features.nrows()
    }

    fn crop(&self, start: usize, len: usize) -> (ArrayView2<'_, f64>, &[usize], &[f64]) {
        let f = self.features.ncols();
        let end = (start + len).min(self.num_frames());
        (
            self.features.slice(s![start..end, ..]),
            &self.labels[start * f..end * f],
            &self.weights[start * f..end * f],
        )
    }
}

/// Loss and parameter gradient for one example.
pub fn loss_gradient(
    net: &EmbeddingNetwork,
    features: ArrayView2<'_, f64>,
    labels: &[usize],
    weights: &[f64],
) -> Result<(f64, Vec<f64>), DcError> {
    let (v, cache) = net.forward_cached(features)?;
    let (loss, d_v) = weighted_dc_loss_grad(v.v.view(), labels, weights)?;
    if !loss.is_finite() {
        return Err(DcError::NonFinite("loss"));
    }
    let grad = net.backward(&cache, &v, d_v.view())?;
    Ok((loss, grad))
}

/// Mean loss over examples, each cropped to its first `max_frames` frames.
pub fn evaluate_loss(net: &EmbeddingNetwork, data: &[TrainingExample], max_frames: usize) -> Result<f64, DcError> {
    if data.is_empty() {
        return Err(DcError::EmptyDataset);
    }
    let mut total = 0.0;
    for ex in data {
        let (x, l, w) = ex.crop(0, max_frames);
        let v = net.forward(x)?;
        total += super::loss::weighted_dc_loss(v.v.view(), l, w)?;
    }
    Ok(total / data.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(num_params: usize) -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, m: vec![0.0; num_params], v: vec![0.0; num_params], t: 0 }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// Multiplies the learning rate by `decay` after `patience` consecutive
/// epochs without a new best validation loss, then starts counting again.
#[derive(Debug, Clone, PartialEq)]
pub struct PlateauScheduler {
    pub lr: f64,
    pub decay: f64,
    pub patience: usize,
    best: f64,
    stale: usize,
}

impl PlateauScheduler {
    pub fn new(lr: f64, decay: f64, patience: usize) -> Self {
        Self { lr, decay, patience, best: f64::INFINITY, stale: 0 }
    }

    /// Returns the learning rate to use for the next epoch.
    pub fn step(&mut self, val_loss: f64) -> f64 {
        if val_loss < self.best {
            self.best = val_loss;
            self.stale = 0;
        } else {
            self.stale += 1;
            if self.stale >= self.patience {
                self.lr *= self.decay;
                self.stale = 0;
            }
        }
        self.lr
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone)]
pub struct TrainingOutcome {
    /// Parameters from the epoch with the lowest validation loss.
    pub network: EmbeddingNetwork,
    pub curve: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

pub fn train(
    net: EmbeddingNetwork,
    train_set: &[TrainingExample],
    validation: &[TrainingExample],
    config: &TrainingConfig,
) -> Result<TrainingOutcome, DcError> {
    train_with_progress(net, train_set, validation, config, |_| {})
}

pub fn train_with_progress(
    mut net: EmbeddingNetwork,
    train_set: &[TrainingExample],
    validation: &[TrainingExample],
    config: &TrainingConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainingOutcome, DcError> {
    config.validate()?;
    if train_set.is_empty() || validation.is_empty() {
        return Err(DcError::EmptyDataset);
    }
    let mut adam = Adam::new(net.num_params());
    let mut scheduler = PlateauScheduler::new(config.initial_lr, config.lr_decay, config.plateau_patience);
    let mut lr = config.initial_lr;
    let mut curve = Vec::with_capacity(config.epochs);
    let mut best: Option<(usize, f64, Vec<f64>)> = None;
    let shuffle_seed = derive_seed(config.seed, stream_id("shuffle"));
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 0..config.epochs {
        let mut rng = rng_for(shuffle_seed, epoch as u64);
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let mut grad = vec![0.0; net.num_params()];
            for &i in batch {
                let ex = &train_set[i];
                let frames = ex.num_frames();
                let start = if frames > config.max_frames { rng.random_range(0..=frames - config.max_frames) } else { 0 };
                let (x, l, w) = ex.crop(start, config.max_frames);
                let (loss, g) = loss_gradient(&net, x, l, w).map_err(|e| DcError::Diverged { epoch, detail: e.to_string() })?;
                epoch_loss += loss;
                for (a, b) in grad.iter_mut().zip(&g) {
                    *a += b;
                }
            }
            let scale = 1.0 / batch.len() as f64;
            grad.iter_mut().for_each(|g| *g *= scale);
            adam.step(&mut net.params, &grad, lr);
        }
        let train_loss = epoch_loss / train_set.len() as f64;
        let val_loss = evaluate_loss(&net, validation, config.max_frames)
            .map_err(|e| DcError::Diverged { epoch, detail: e.to_string() })?;
        if !train_loss.is_finite() || !val_loss.is_finite() {
            return Err(DcError::Diverged { epoch, detail: format!("train loss {train_loss}, validation loss {val_loss}") });
        }
        let record = EpochRecord { epoch, train_loss, val_loss, lr };
        on_epoch(&record);
        curve.push(record);
        if best.as_ref().is_none_or(|b| val_loss < b.1) {
            best = Some((epoch, val_loss, net.params.clone()));
        }
        lr = scheduler.step(val_loss);
    }
    let (best_epoch, best_val_loss, params) = best.expect("at least one epoch");
    net.params = params;
    net.trained = true;
    Ok(TrainingOutcome { network: net, curve, best_epoch, best_val_loss })
}

//! Loss, learning-rate schedule and the SGD update.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::model::{self, ModelConfig, Params};
use crate::ops;
use crate::params::ParamGroup;
use crate::rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr0: f64,
    pub decay_every: usize,
    pub decay_factor: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { batch_size: 60, lr0: 0.01, decay_every: 15, decay_factor: 0.1, momentum: 0.0, epochs: 60, seed: 0 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return Err(Error::Config(format!("decay factor {} outside (0, 1]", self.decay_factor)));
        }
        if self.decay_every == 0 {
            return Err(Error::Config("decay interval must be at least 1 epoch".into()));
        }
        if !(self.lr0 >= 0.0 && self.lr0.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be finite and nonnegative", self.lr0)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum {} outside [0, 1)", self.momentum)));
        }
        Ok(())
    }
}

/// Step decay: `lr0 · factor^⌊epoch / decay_every⌋`.
pub fn lr_at(epoch: usize, cfg: &TrainConfig) -> f64 {
    cfg.lr0 * libm::pow(cfg.decay_factor, (epoch / cfg.decay_every.max(1)) as f64)
}

fn check_labels(logits: &Tensor, labels: &[usize]) -> Result<(usize, usize)> {
    let (b, k) = logits.dims2()?;
    if labels.len() != b {
        return Err(Error::Dim(format!("{} labels for {b} rows of logits", labels.len())));
    }
    if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= k) {
        return Err(Error::Label { index, label, classes: k });
    }
    Ok((b, k))
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + libm::log(row.iter().map(|v| libm::exp(v - m)).sum::<f64>())
}

/// Mean negative log-likelihood of `labels` under row-wise softmax.
pub fn cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<f64> {
    let (b, _) = check_labels(logits, labels)?;
    let total: f64 = labels.iter().enumerate().map(|(i, &l)| log_sum_exp(logits.row(i)) - logits.row(i)[l]).sum();
    Ok(total / b as f64)
}

/// `dL/dlogits = (softmax(logits) − onehot) / B`.
pub fn cross_entropy_backward(logits: &Tensor, labels: &[usize]) -> Result<Tensor> {
    let (b, k) = check_labels(logits, labels)?;
    let mut g = Vec::with_capacity(b * k);
    for (i, &l) in labels.iter().enumerate() {
        let row = logits.row(i);
        let lse = log_sum_exp(row);
        g.extend(row.iter().enumerate().map(|(j, v)| {
            let p = libm::exp(v - lse);
            (if j == l { p - 1.0 } else { p }) / b as f64
        }));
    }
    Tensor::new(&[b, k], g)
}

/// One sample's contribution to a batch of `batch` samples: its share of
/// the mean loss, its logits and its gradient.
pub fn sample_loss_and_grad(
    p: &Params,
    cfg: &ModelConfig,
    frames: &Tensor,
    label: usize,
    batch: usize,
) -> Result<(f64, Tensor, Params)> {
    let cache = model::forward_cached(frames, p, cfg)?;
    let logits = Tensor::new(&[1, cfg.num_classes], cache.logits.data().to_vec())?;
    let loss = cross_entropy(&logits, &[label])? / batch as f64;
    let dlogits = ops::scale(&cross_entropy_backward(&logits, &[label])?, 1.0 / batch as f64);
    let mut grads = p.zeroed();
    model::backward(p, cfg, &cache, &dlogits, &mut grads)?;
    Ok((loss, cache.logits, grads))
}

/// Mean cross-entropy over a batch, the `[B×K]` logits and the gradient.
pub fn batch_loss_and_grad(
    p: &Params,
    cfg: &ModelConfig,
    frames: &[&Tensor],
    labels: &[usize],
) -> Result<(f64, Tensor, Params)> {
    if frames.len() != labels.len() || frames.is_empty() {
        return Err(Error::Dim(format!("{} samples with {} labels", frames.len(), labels.len())));
    }
    let b = frames.len();
    let mut loss = 0.0;
    let mut logits = Vec::with_capacity(b * cfg.num_classes);
    let mut grads = p.zeroed();
    for (i, (f, &l)) in frames.iter().zip(labels).enumerate() {
        if l >= cfg.num_classes {
            return Err(Error::Label { index: i, label: l, classes: cfg.num_classes });
        }
        let (li, z, g) = sample_loss_and_grad(p, cfg, f, l, b)?;
        loss += li;
        logits.extend_from_slice(z.data());
        grads.accumulate(&g);
    }
    Ok((loss, Tensor::new(&[b, cfg.num_classes], logits)?, grads))
}

/// Mean cross-entropy of a batch without gradients.
pub fn batch_loss(p: &Params, cfg: &ModelConfig, frames: &[&Tensor], labels: &[usize]) -> Result<f64> {
    let mut logits = Vec::with_capacity(frames.len() * cfg.num_classes);
    for f in frames {
        logits.extend_from_slice(model::forward(f, p, cfg)?.data());
    }
    cross_entropy(&Tensor::new(&[frames.len(), cfg.num_classes], logits)?, labels)
}

/// SGD with optional heavy-ball momentum: `v ← μv + g`, `w ← w − lr·v`.
#[derive(Debug, Clone)]
pub struct Sgd<P> {
    pub momentum: f64,
    velocity: Option<P>,
}

impl<P: ParamGroup> Sgd<P> {
    pub fn new(momentum: f64) -> Self {
        Self { momentum, velocity: None }
    }

    pub fn velocity(&self) -> Option<&P> {
        self.velocity.as_ref()
    }

    pub fn step(&mut self, params: &mut P, grads: &P, lr: f64) {
        let mu = self.momentum;
        let v = self.velocity.get_or_insert_with(|| params.zeroed());
        let g = grads.named_tensors();
        for ((w, v), (_, g)) in params.tensors_mut().into_iter().zip(v.tensors_mut()).zip(g) {
            for ((w, v), g) in w.data_mut().iter_mut().zip(v.data_mut()).zip(g.data()) {
                *v = mu * *v + g;
                *w -= lr * *v;
            }
        }
    }
}

/// Shuffled sample order for one epoch; depends only on `(seed, epoch)`.
pub fn epoch_order(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    rng::permutation(&mut rng::seeded(rng::mix(&[seed, 0x5eed_0f_ebc4, epoch as u64])), n)
}

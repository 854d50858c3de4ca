//! The epoch loop.
//!
//! Per-sample gradients of a batch are computed in parallel and summed in
//! batch order, so results do not depend on thread count or scheduling.

use std::fmt::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use estf_core::metrics::argmax;
use estf_core::model::{init_params, Params};
use estf_core::params::ParamGroup;
use estf_core::rng;
use estf_core::training::{epoch_order, lr_at, sample_loss_and_grad, Sgd};
use estf_core::Tensor;
use rayon::prelude::*;

use crate::checkpoint;
use crate::config::RunConfig;
use crate::dataset::{load_split, Manifest, Split};
use crate::error::{self, Error, Result};
use crate::eval::logits_for;

#[derive(Debug, Clone, PartialEq)]
pub struct CurveRow {
    pub epoch: usize,
    pub lr: f64,
    /// Mean per-sample loss over the epoch, each taken before its batch's update.
    pub train_loss: f64,
    /// Running top-1 over the epoch, same convention.
    pub train_top1: f64,
    pub val_top1: Option<f64>,
    pub wall_seconds: f64,
}

pub const CURVE_HEADER: &str = "epoch,lr,train_loss,train_top1,val_top1,wall_seconds";

pub fn curve_csv(rows: &[CurveRow]) -> String {
    let mut s = String::from(CURVE_HEADER);
    s.push('\n');
    for r in rows {
        let val = r.val_top1.map(|v| format!("{v:.6}")).unwrap_or_default();
        let _ =
            writeln!(s, "{},{:e},{:.6},{:.6},{},{:.3}", r.epoch, r.lr, r.train_loss, r.train_top1, val, r.wall_seconds);
    }
    s
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub params: Params,
    pub best: Params,
    pub best_epoch: usize,
    pub best_val_top1: Option<f64>,
    pub curve: Vec<CurveRow>,
}

/// Seed used for the initial weights of a run.
pub fn init_seed(seed: u64) -> u64 {
    rng::mix(&[seed, 0x1417])
}

/// Trains from scratch on in-memory samples. `progress` sees each epoch's row.
pub fn train_samples(
    run: &RunConfig,
    train: &[(Tensor, usize)],
    val: &[(Tensor, usize)],
    mut progress: impl FnMut(&CurveRow),
) -> Result<TrainOutput> {
    run.validate()?;
    if train.is_empty() {
        return Err(Error::Data("the train split is empty".into()));
    }
    let (cfg, tc) = (&run.model, &run.train);
    let mut params = init_params(cfg, init_seed(tc.seed))?;
    let mut opt = Sgd::new(tc.momentum);
    let start = Instant::now();
    let mut curve = Vec::with_capacity(tc.epochs);
    let mut best = params.clone();
    let (mut best_epoch, mut best_val) = (0, None::<f64>);

    for epoch in 0..tc.epochs {
        let lr = lr_at(epoch, tc);
        let order = epoch_order(tc.seed, epoch, train.len());
        let (mut loss_sum, mut hits) = (0.0, 0usize);
        for batch in order.chunks(tc.batch_size) {
            let b = batch.len();
            let parts = batch
                .par_iter()
                .map(|&i| sample_loss_and_grad(&params, cfg, &train[i].0, train[i].1, b))
                .collect::<estf_core::Result<Vec<_>>>()?;
            let mut grads = params.zeroed();
            for ((loss, logits, g), &i) in parts.iter().zip(batch) {
                loss_sum += loss * b as f64;
                hits += usize::from(argmax(logits.data()) == train[i].1);
                grads.accumulate(g);
            }
            opt.step(&mut params, &grads, lr);
        }
        if !params.is_finite() {
            return Err(Error::Data(format!("parameters became non-finite in epoch {epoch} (lr {lr})")));
        }
        let val_top1 = if val.is_empty() { None } else { Some(top1(&params, run, val)?) };
        if let Some(v) = val_top1 {
            if best_val.is_none_or(|b| v > b) {
                best_val = Some(v);
                best = params.clone();
                best_epoch = epoch;
            }
        }
        let row = CurveRow {
            epoch,
            lr,
            train_loss: loss_sum / train.len() as f64,
            train_top1: hits as f64 / train.len() as f64,
            val_top1,
            wall_seconds: start.elapsed().as_secs_f64(),
        };
        progress(&row);
        curve.push(row);
    }
    if best_val.is_none() {
        best = params.clone();
        best_epoch = tc.epochs.saturating_sub(1);
    }
    Ok(TrainOutput { params, best, best_epoch, best_val_top1: best_val, curve })
}

fn top1(params: &Params, run: &RunConfig, samples: &[(Tensor, usize)]) -> Result<f64> {
    let logits = logits_for(params, &run.model, samples)?;
    let hits = samples.iter().enumerate().filter(|(i, (_, l))| argmax(logits.row(*i)) == *l).count();
    Ok(hits as f64 / samples.len() as f64)
}

/// Files written by [`train`].
#[derive(Debug, Clone)]
pub struct TrainArtifacts {
    pub config: PathBuf,
    pub curve: PathBuf,
    pub best: PathBuf,
    pub last: PathBuf,
}

/// Loads the dataset, trains, and writes `effective.cfg`, `curve.csv`,
/// `best.ckpt` (highest validation top-1) and `last.ckpt` under `out`.
pub fn train(
    run: &RunConfig,
    manifest: &Manifest,
    out: &Path,
    progress: impl FnMut(&CurveRow),
) -> Result<(TrainOutput, TrainArtifacts)> {
    run.validate()?;
    let classes = manifest.num_classes();
    if classes > run.model.num_classes {
        return Err(Error::Config(format!(
            "dataset has {classes} classes but num_classes is {}",
            run.model.num_classes
        )));
    }
    let train_set = load_split(manifest, Split::Train, &run.model, run.normalization)?;
    let val_set = load_split(manifest, Split::Val, &run.model, run.normalization)?;
    let output = train_samples(run, &train_set, &val_set, progress)?;
    let art = TrainArtifacts {
        config: out.join("effective.cfg"),
        curve: out.join("curve.csv"),
        best: out.join("best.ckpt"),
        last: out.join("last.ckpt"),
    };
    run.save(&art.config)?;
    error::write(&art.curve, curve_csv(&output.curve).as_bytes())?;
    checkpoint::save(&art.best, run, &output.best)?;
    checkpoint::save(&art.last, run, &output.params)?;
    Ok((output, art))
}

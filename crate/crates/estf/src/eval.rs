//! Evaluation reports and single-file prediction.

use std::fmt::Write;
use std::path::{Path, PathBuf};

use estf_core::events::Normalization;
use estf_core::metrics::{argmax, confusion_matrix, top_k, topk_accuracy, ConfusionMatrix};
use estf_core::model::{forward, ModelConfig, Params};
use estf_core::ops;
use estf_core::Tensor;
use rayon::prelude::*;

use crate::config::RunConfig;
use crate::dataset::{load_frames, load_split, Manifest, Split};
use crate::error::{self, Error, Result};

/// Logits `[B×K]` for a list of samples, rows in input order.
pub fn logits_for(params: &Params, cfg: &ModelConfig, samples: &[(Tensor, usize)]) -> Result<Tensor> {
    let rows = samples.par_iter().map(|(x, _)| forward(x, params, cfg)).collect::<estf_core::Result<Vec<_>>>()?;
    let data = rows.into_iter().flat_map(Tensor::into_data).collect();
    Ok(Tensor::new(&[samples.len(), cfg.num_classes], data)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub split: String,
    pub samples: usize,
    pub top1: f64,
    /// `k` actually used for the top-5 column (fewer when there are fewer classes).
    pub top5_k: usize,
    pub top5: f64,
    /// Unweighted mean of per-class top-1 over the classes present.
    pub mean_class_accuracy: f64,
    pub confusion: ConfusionMatrix,
    pub class_names: Vec<String>,
}

impl EvalReport {
    pub fn from_logits(split: &str, logits: &Tensor, labels: &[usize], class_names: Vec<String>) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::Data(format!("the {split} split is empty")));
        }
        let (_, k) = logits.dims2()?;
        let top5_k = k.min(5);
        let preds: Vec<usize> = (0..labels.len()).map(|i| argmax(logits.row(i))).collect();
        let confusion = confusion_matrix(&preds, labels, k)?;
        Ok(Self {
            split: split.to_string(),
            samples: labels.len(),
            top1: topk_accuracy(logits, labels, 1)?,
            top5_k,
            top5: topk_accuracy(logits, labels, top5_k)?,
            mean_class_accuracy: confusion.mean_class_accuracy(),
            confusion,
            class_names,
        })
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "split: {}", self.split);
        let _ = writeln!(s, "samples: {}", self.samples);
        let _ = writeln!(s, "top1: {:.6}", self.top1);
        let _ = writeln!(s, "top{}: {:.6}", self.top5_k, self.top5);
        let _ = writeln!(s, "mean_class_accuracy: {:.6}", self.mean_class_accuracy);
        let _ = writeln!(s, "correct: {}", self.confusion.trace());
        let _ = writeln!(s, "total: {}", self.confusion.total());
        for (i, acc) in self.confusion.per_class_accuracy().iter().enumerate() {
            let n: u64 = self.confusion.counts[i].iter().sum();
            match acc {
                Some(a) => {
                    let _ = writeln!(s, "class {}: {:.6} ({n} samples)", self.class_names[i], a);
                }
                None => {
                    let _ = writeln!(s, "class {}: - (0 samples)", self.class_names[i]);
                }
            }
        }
        s
    }

    /// `(K+1)×(K+1)` table: header row of predicted classes, one row per true class.
    pub fn confusion_csv(&self) -> String {
        let mut s = String::from("true\\predicted");
        for n in &self.class_names {
            let _ = write!(s, ",{n}");
        }
        s.push('\n');
        for (name, row) in self.class_names.iter().zip(&self.confusion.counts) {
            s.push_str(name);
            for c in row {
                let _ = write!(s, ",{c}");
            }
            s.push('\n');
        }
        s
    }

    /// Writes `report.txt` and `confusion.csv` under `dir`.
    pub fn write(&self, dir: &Path) -> Result<[PathBuf; 2]> {
        let report = dir.join("report.txt");
        let confusion = dir.join("confusion.csv");
        error::write(&report, self.to_text().as_bytes())?;
        error::write(&confusion, self.confusion_csv().as_bytes())?;
        Ok([report, confusion])
    }
}

pub fn evaluate_samples(
    params: &Params,
    cfg: &ModelConfig,
    samples: &[(Tensor, usize)],
    split: &str,
    class_names: Vec<String>,
) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(Error::Data(format!("the {split} split is empty")));
    }
    let logits = logits_for(params, cfg, samples)?;
    let labels: Vec<usize> = samples.iter().map(|(_, l)| *l).collect();
    EvalReport::from_logits(split, &logits, &labels, class_names)
}

pub fn evaluate(params: &Params, run: &RunConfig, manifest: &Manifest, split: Split) -> Result<EvalReport> {
    let samples = load_split(manifest, split, &run.model, run.normalization)?;
    evaluate_samples(params, &run.model, &samples, split.name(), manifest.class_names(run.model.num_classes))
}

/// Top classes of one event file as `(label, softmax score)`, best first.
pub fn predict_file(
    params: &Params,
    cfg: &ModelConfig,
    norm: Normalization,
    path: &Path,
    k: usize,
) -> Result<Vec<(usize, f64)>> {
    let x = load_frames(path, cfg, norm)?;
    let logits = forward(&x, params, cfg)?;
    let probs = ops::softmax_rows(&ops::reshape(&logits, &[1, cfg.num_classes])?)?;
    Ok(top_k(probs.data(), k.min(cfg.num_classes)).into_iter().map(|i| (i, probs.data()[i])).collect())
}

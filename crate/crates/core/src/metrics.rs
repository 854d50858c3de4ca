//! Top-k accuracy and confusion counts.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Indices of the `k` largest entries, best first. Equal scores rank the
/// lower class index first.
pub fn top_k(row: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..row.len()).collect();
    idx.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

pub fn argmax(row: &[f64]) -> usize {
    top_k(row, 1)[0]
}

/// Fraction of rows whose label is among the `k` largest logits.
pub fn topk_accuracy(logits: &Tensor, labels: &[usize], k: usize) -> Result<f64> {
    let (b, n) = logits.dims2()?;
    if labels.len() != b {
        return Err(Error::Dim(format!("{} labels for {b} rows of logits", labels.len())));
    }
    if k == 0 || k > n {
        return Err(Error::Config(format!("k = {k} outside [1, {n}]")));
    }
    let mut hits = 0usize;
    for (i, &l) in labels.iter().enumerate() {
        if l >= n {
            return Err(Error::Label { index: i, label: l, classes: n });
        }
        if top_k(logits.row(i), k).contains(&l) {
            hits += 1;
        }
    }
    Ok(hits as f64 / b as f64)
}

/// `counts[i][j]` = samples of true class `i` predicted as `j`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub classes: usize,
    pub counts: Vec<Vec<u64>>,
}

pub fn confusion_matrix(preds: &[usize], labels: &[usize], classes: usize) -> Result<ConfusionMatrix> {
    if preds.len() != labels.len() {
        return Err(Error::Dim(format!("{} predictions for {} labels", preds.len(), labels.len())));
    }
    let mut counts = vec![vec![0u64; classes]; classes];
    for (i, (&p, &l)) in preds.iter().zip(labels).enumerate() {
        if l >= classes {
            return Err(Error::Label { index: i, label: l, classes });
        }
        if p >= classes {
            return Err(Error::Label { index: i, label: p, classes });
        }
        counts[l][p] += 1;
    }
    Ok(ConfusionMatrix { classes, counts })
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes).map(|i| self.counts[i][i]).sum()
    }

    pub fn row_sums(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    /// `trace / total`; zero for an empty matrix.
    pub fn accuracy(&self) -> f64 {
        let t = self.total();
        if t == 0 {
            0.0
        } else {
            self.trace() as f64 / t as f64
        }
    }

    /// Top-1 per true class; `None` for classes with no samples.
    pub fn per_class_accuracy(&self) -> Vec<Option<f64>> {
        self.counts
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let n: u64 = r.iter().sum();
                (n > 0).then(|| r[i] as f64 / n as f64)
            })
            .collect()
    }

    /// Unweighted mean of per-class accuracy over the classes that occur.
    pub fn mean_class_accuracy(&self) -> f64 {
        let present: Vec<f64> = self.per_class_accuracy().into_iter().flatten().collect();
        if present.is_empty() {
            0.0
        } else {
            present.iter().sum::<f64>() / present.len() as f64
        }
    }
}

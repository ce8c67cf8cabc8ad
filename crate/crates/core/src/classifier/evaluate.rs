use serde::Serialize;

use crate::error::{Error, Result};

/// Model outputs to score against labels.
#[derive(Debug, Clone, PartialEq)]
pub enum Predictions {
    /// Hard 0/1 predictions.
    Binary(Vec<u8>),
    /// One probability vector per example.
    Multiclass(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BinaryMetrics {
    pub accuracy: f64,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MulticlassMetrics {
    pub top1: f64,
    pub top2: f64,
    pub top3: f64,
    pub within_one: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(untagged)]
pub enum EvalMetrics {
    Binary(BinaryMetrics),
    Multiclass(MulticlassMetrics),
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}

/// Rank of `label` among classes ordered by descending probability, lower
/// indices first on ties (0 = top).
fn rank_of(p: &[f64], label: usize) -> usize {
    let v = p.get(label).copied().unwrap_or(f64::NEG_INFINITY);
    p.iter()
        .enumerate()
        .filter(|&(i, &q)| q > v || (q == v && i < label))
        .count()
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn binary(preds: &[u8], labels: &[usize]) -> BinaryMetrics {
    let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
    for (&p, &y) in preds.iter().zip(labels) {
        match (p == 1, y == 1) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => tn += 1,
        }
    }
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    if tp + fp == 0 {
        log::warn!("no positive predictions; precision reported as 0");
    }
    BinaryMetrics {
        accuracy: ratio(tp + tn, labels.len()),
        f1: ratio(2 * tp, 2 * tp + fp + fn_),
        precision,
        recall,
    }
}

fn multiclass(probs: &[Vec<f64>], labels: &[usize]) -> MulticlassMetrics {
    let n = labels.len();
    let ranks: Vec<usize> = probs.iter().zip(labels).map(|(p, &y)| rank_of(p, y)).collect();
    let top = |k: usize| ratio(ranks.iter().filter(|&&r| r < k).count(), n);
    let within = probs
        .iter()
        .zip(labels)
        .filter(|(p, &y)| argmax(p).abs_diff(y) <= 1)
        .count();
    MulticlassMetrics {
        top1: top(1),
        top2: top(2),
        top3: top(3),
        within_one: ratio(within, n),
    }
}

pub fn evaluate(predictions: &Predictions, labels: &[usize]) -> Result<EvalMetrics> {
    let len = match predictions {
        Predictions::Binary(p) => p.len(),
        Predictions::Multiclass(p) => p.len(),
    };
    if len != labels.len() {
        return Err(Error::validation(format!(
            "{len} predictions but {} labels",
            labels.len()
        )));
    }
    Ok(match predictions {
        Predictions::Binary(p) => {
            if p.iter().any(|&v| v > 1) || labels.iter().any(|&y| y > 1) {
                return Err(Error::validation("binary predictions and labels must be 0 or 1"));
            }
            EvalMetrics::Binary(binary(p, labels))
        }
        Predictions::Multiclass(p) => EvalMetrics::Multiclass(multiclass(p, labels)),
    })
}

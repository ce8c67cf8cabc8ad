//! Lightweight hallucination predictors trained on simulation labels.
//!
//! A linear scorer over hashed query features feeds either a logistic
//! (binary) head or an ordinal head with cumulative-softplus cutpoints.
//! Models accept any feature vectors, so external embeddings can replace
//! the hashed featurizer.

mod adam;
mod evaluate;
mod features;
mod ordinal;
mod threshold;

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use adam::{clip_grad_norm, Adam};
pub use evaluate::{argmax, evaluate, BinaryMetrics, EvalMetrics, MulticlassMetrics, Predictions};
pub use features::{featurize, tokenize, FeatureSpec, FeatureVector, MIN_DIM, SCENARIO_SLOTS};
pub use ordinal::{
    cutpoints, initial_theta, ordinal_forward, ordinal_loss_and_grad, ordinal_probabilities, softplus, train_ordinal,
    OrdinalGradient, OrdinalHead, LOG_FLOOR,
};
pub use threshold::{f1_at, tune_threshold, GRID_STEPS};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyperparams {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub max_grad_norm: f64,
    pub seed: u64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            lr: 1e-2,
            epochs: 5,
            batch_size: 8,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            max_grad_norm: 1.0,
            seed: 42,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr > 0.0) || self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::validation(
                "learning rate, epochs and batch size must be positive",
            ));
        }
        Ok(())
    }
}

/// `f(x) = w . x + b` plus the per-class loss weights it was trained with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub class_weights: Vec<f64>,
}

impl LinearModel {
    pub fn zeros(dim: usize, class_weights: Vec<f64>) -> Self {
        LinearModel {
            weights: vec![0.0; dim],
            bias: 0.0,
            class_weights,
        }
    }

    pub fn score(&self, x: &[f64]) -> f64 {
        self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.bias
    }

    /// Logistic probability of the positive class.
    pub fn predict_proba(&self, x: &[f64]) -> f64 {
        sigmoid(self.score(x))
    }

    pub fn is_finite(&self) -> bool {
        self.bias.is_finite() && self.weights.iter().all(|w| w.is_finite())
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `N / count_c` for each class `0..k`; every class must occur.
pub fn inverse_frequency_weights(labels: &[usize], k: usize) -> Result<Vec<f64>> {
    let mut counts = vec![0usize; k];
    for &y in labels {
        if y >= k {
            return Err(Error::validation(format!("label {y} outside 0..{k}")));
        }
        counts[y] += 1;
    }
    if let Some(c) = counts.iter().position(|&c| c == 0) {
        return Err(Error::validation(format!(
            "class {c} does not occur in the training labels"
        )));
    }
    let n = labels.len() as f64;
    Ok(counts.iter().map(|&c| n / c as f64).collect())
}

fn check_features(features: &[FeatureVector], labels_len: usize) -> Result<usize> {
    if features.is_empty() {
        return Err(Error::validation("empty training set"));
    }
    if features.len() != labels_len {
        return Err(Error::validation(format!(
            "{} feature vectors but {labels_len} labels",
            features.len()
        )));
    }
    let dim = features[0].len();
    if features
        .iter()
        .any(|f| f.len() != dim || f.0.iter().any(|x| !x.is_finite()))
    {
        return Err(Error::validation(
            "feature vectors must share one dimension and be finite",
        ));
    }
    Ok(dim)
}

pub(crate) fn epoch_order(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx
}

/// Class-weighted logistic regression trained with Adam. Deterministic for
/// a fixed `hp.seed`.
pub fn train_binary(
    features: &[FeatureVector],
    labels: &[u8],
    class_weights: &[f64],
    hp: &Hyperparams,
) -> Result<LinearModel> {
    hp.validate()?;
    let dim = check_features(features, labels.len())?;
    if labels.iter().any(|&y| y > 1) {
        return Err(Error::validation("binary labels must be 0 or 1"));
    }
    if labels.iter().all(|&y| y == labels[0]) {
        return Err(Error::validation("training labels contain a single class"));
    }
    if class_weights.len() != 2 || class_weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
        return Err(Error::validation("binary training needs two positive class weights"));
    }
    let mut params = vec![0.0; dim + 1];
    let mut opt = Adam::new(dim + 1, hp.lr, hp.beta1, hp.beta2, hp.eps);
    let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
    let mut grad = vec![0.0; dim + 1];
    for _ in 0..hp.epochs {
        let order = epoch_order(features.len(), &mut rng);
        for batch in order.chunks(hp.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let mut wsum = 0.0;
            for &i in batch {
                let x = features[i].as_slice();
                let y = labels[i] as f64;
                let w = class_weights[labels[i] as usize];
                let z: f64 = params[..dim].iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + params[dim];
                let r = w * (sigmoid(z) - y);
                for (g, xv) in grad[..dim].iter_mut().zip(x) {
                    *g += r * xv;
                }
                grad[dim] += r;
                wsum += w;
            }
            grad.iter_mut().for_each(|g| *g /= wsum);
            clip_grad_norm(&mut grad, hp.max_grad_norm);
            opt.step(&mut params, &grad);
        }
    }
    let bias = params.pop().unwrap_or(0.0);
    let model = LinearModel {
        weights: params,
        bias,
        class_weights: class_weights.to_vec(),
    };
    if !model.is_finite() {
        return Err(Error::validation("training diverged"));
    }
    Ok(model)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    Binary,
    Ordinal,
}

/// On-disk model: a JSON object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub version: u32,
    pub kind: HeadKind,
    pub weights: Vec<f64>,
    pub bias: f64,
    /// Raw ordinal parameters; empty for binary heads.
    pub theta: Vec<f64>,
    #[serde(rename = "D")]
    pub dim: usize,
    #[serde(rename = "K")]
    pub classes: usize,
    pub feature_spec: FeatureSpec,
    pub tau: Option<f64>,
    pub class_weights: Vec<f64>,
}

impl ModelFile {
    pub const VERSION: u32 = 1;

    pub fn binary(model: &LinearModel, spec: FeatureSpec, tau: Option<f64>) -> Self {
        ModelFile {
            version: Self::VERSION,
            kind: HeadKind::Binary,
            weights: model.weights.clone(),
            bias: model.bias,
            theta: Vec::new(),
            dim: spec.dim,
            classes: 2,
            feature_spec: spec,
            tau,
            class_weights: model.class_weights.clone(),
        }
    }

    pub fn ordinal(head: &OrdinalHead, spec: FeatureSpec) -> Self {
        ModelFile {
            version: Self::VERSION,
            kind: HeadKind::Ordinal,
            weights: head.scorer.weights.clone(),
            bias: head.scorer.bias,
            theta: head.theta.clone(),
            dim: spec.dim,
            classes: head.classes(),
            feature_spec: spec,
            tau: None,
            class_weights: head.scorer.class_weights.clone(),
        }
    }

    pub fn linear(&self) -> LinearModel {
        LinearModel {
            weights: self.weights.clone(),
            bias: self.bias,
            class_weights: self.class_weights.clone(),
        }
    }

    pub fn ordinal_head(&self) -> Result<OrdinalHead> {
        if self.kind != HeadKind::Ordinal {
            return Err(Error::validation("model file holds a binary head"));
        }
        Ok(OrdinalHead {
            scorer: self.linear(),
            theta: self.theta.clone(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != Self::VERSION {
            return Err(Error::validation(format!("unsupported model version {}", self.version)));
        }
        if self.weights.len() != self.feature_spec.width() || self.dim != self.feature_spec.dim {
            return Err(Error::validation("model weights do not match the feature spec"));
        }
        match self.kind {
            HeadKind::Binary if self.classes != 2 => Err(Error::validation("binary model must have K = 2")),
            HeadKind::Ordinal if self.theta.len() + 1 != self.classes => {
                Err(Error::validation("ordinal model needs K - 1 theta values"))
            }
            _ => Ok(()),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::file(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        let m: ModelFile = serde_json::from_str(&text)?;
        m.validate()?;
        Ok(m)
    }
}

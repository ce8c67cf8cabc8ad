//! Training and evaluation drivers over label files.

use crate::classifier::{
    evaluate, inverse_frequency_weights, train_binary, train_ordinal, tune_threshold, EvalMetrics, FeatureSpec,
    FeatureVector, HeadKind, Hyperparams, ModelFile, Predictions,
};
use crate::error::{Error, Result};
use crate::exec::{self, ExecMode};

use super::report::LabelRow;

/// Default decision threshold for binary heads without a tuned τ.
pub const DEFAULT_TAU: f64 = 0.5;

pub fn featurize_rows(spec: &FeatureSpec, rows: &[LabelRow], mode: ExecMode) -> Vec<FeatureVector> {
    exec::map(mode, rows, |r| spec.featurize_query(&r.text, r.scenario))
}

/// Number of ordinal classes (`n + 2`) shared by every row.
fn class_count(rows: &[LabelRow]) -> Result<usize> {
    let den = rows.first().map_or(0, |r| r.p_h_den);
    if rows.iter().any(|r| r.p_h_den != den) {
        return Err(Error::validation("rows mix different numbers of agents"));
    }
    Ok(den as usize + 1)
}

pub struct TrainRequest<'a> {
    pub kind: HeadKind,
    pub spec: FeatureSpec,
    pub hp: Hyperparams,
    pub train: &'a [LabelRow],
    /// Rows used for threshold tuning; `None` disables tuning.
    pub tune_on: Option<&'a [LabelRow]>,
    pub exec: ExecMode,
}

pub fn train_model(req: &TrainRequest<'_>) -> Result<ModelFile> {
    if req.train.is_empty() {
        return Err(Error::validation("training split is empty"));
    }
    let xs = featurize_rows(&req.spec, req.train, req.exec);
    match req.kind {
        HeadKind::Binary => {
            let ys: Vec<u8> = req.train.iter().map(|r| r.binary_label).collect();
            if ys.iter().all(|&y| y == ys[0]) {
                return Err(Error::validation("training labels contain a single class"));
            }
            let labels: Vec<usize> = ys.iter().map(|&y| y as usize).collect();
            let weights = inverse_frequency_weights(&labels, 2)?;
            let model = train_binary(&xs, &ys, &weights, &req.hp)?;
            let tau = match req.tune_on {
                None => None,
                Some(rows) => {
                    if rows.is_empty() {
                        return Err(Error::validation("threshold tuning split is empty"));
                    }
                    let vx = featurize_rows(&req.spec, rows, req.exec);
                    let scores: Vec<f64> = vx.iter().map(|x| model.predict_proba(x.as_slice())).collect();
                    let vy: Vec<u8> = rows.iter().map(|r| r.binary_label).collect();
                    Some(tune_threshold(&scores, &vy)?)
                }
            };
            Ok(ModelFile::binary(&model, req.spec, tau))
        }
        HeadKind::Ordinal => {
            let k = class_count(req.train)?;
            let ys: Vec<usize> = req.train.iter().map(|r| r.class_label).collect();
            let weights = inverse_frequency_weights(&ys, k)?;
            let head = train_ordinal(&xs, &ys, k, &weights, &req.hp)?;
            Ok(ModelFile::ordinal(&head, req.spec))
        }
    }
}

pub fn evaluate_model(model: &ModelFile, rows: &[LabelRow], mode: ExecMode) -> Result<EvalMetrics> {
    if rows.is_empty() {
        return Err(Error::validation("evaluation split is empty"));
    }
    let xs = featurize_rows(&model.feature_spec, rows, mode);
    match model.kind {
        HeadKind::Binary => {
            let lm = model.linear();
            let tau = model.tau.unwrap_or(DEFAULT_TAU);
            let preds = xs
                .iter()
                .map(|x| u8::from(lm.predict_proba(x.as_slice()) >= tau))
                .collect();
            let labels: Vec<usize> = rows.iter().map(|r| r.binary_label as usize).collect();
            evaluate(&Predictions::Binary(preds), &labels)
        }
        HeadKind::Ordinal => {
            let head = model.ordinal_head()?;
            let k = class_count(rows)?;
            if k != head.classes() {
                return Err(Error::validation(format!(
                    "model predicts {} classes but the data has {k}",
                    head.classes()
                )));
            }
            let probs = xs.iter().map(|x| head.predict_proba(x.as_slice())).collect();
            let labels: Vec<usize> = rows.iter().map(|r| r.class_label).collect();
            evaluate(&Predictions::Multiclass(probs), &labels)
        }
    }
}

pub fn render_metrics(m: &EvalMetrics) -> String {
    let rows: Vec<(&str, f64)> = match m {
        EvalMetrics::Binary(b) => vec![
            ("accuracy", b.accuracy),
            ("f1", b.f1),
            ("precision", b.precision),
            ("recall", b.recall),
        ],
        EvalMetrics::Multiclass(c) => vec![
            ("top1", c.top1),
            ("top2", c.top2),
            ("top3", c.top3),
            ("within_one", c.within_one),
        ],
    };
    let mut out = String::from("| metric | value |\n|---|---:|\n");
    for (name, v) in rows {
        out.push_str(&format!("| {name} | {v:.4} |\n"));
    }
    out
}

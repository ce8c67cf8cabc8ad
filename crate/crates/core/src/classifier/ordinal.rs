//! Ordinal head: a scalar score `f(x)` compared against increasing
//! cutpoints `c_1 < ... < c_{K-1}`, with `c_1 = θ_1` and
//! `c_k = θ_1 + Σ_{i=2..k} softplus(θ_i)`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_features, clip_grad_norm, epoch_order, sigmoid, Adam, FeatureVector, Hyperparams, LinearModel};
use crate::error::{Error, Result};

/// Added to every probability before taking its log.
pub const LOG_FLOOR: f64 = 1e-8;

/// `log(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn cutpoints(theta: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(theta.len());
    let mut acc = 0.0;
    for (i, &t) in theta.iter().enumerate() {
        acc += if i == 0 { t } else { softplus(t) };
        out.push(acc);
    }
    out
}

/// `K - 1` values evenly spaced over `[-1, 1]` (a single `-1` when `K = 2`).
pub fn initial_theta(k: usize) -> Vec<f64> {
    let m = k.saturating_sub(1);
    match m {
        0 => Vec::new(),
        1 => vec![-1.0],
        _ => (0..m).map(|i| -1.0 + 2.0 * i as f64 / (m - 1) as f64).collect(),
    }
}

/// Padded cumulative distribution `[0, σ(c_1 - f), ..., σ(c_{K-1} - f), 1]`.
fn padded_cdf(score: f64, cuts: &[f64]) -> Vec<f64> {
    let mut s = Vec::with_capacity(cuts.len() + 2);
    s.push(0.0);
    s.extend(cuts.iter().map(|c| sigmoid(c - score)));
    s.push(1.0);
    s
}

/// Class probabilities as adjacent differences of the padded CDF.
pub fn ordinal_probabilities(score: f64, theta: &[f64]) -> Vec<f64> {
    let s = padded_cdf(score, &cutpoints(theta));
    s.windows(2).map(|w| w[1] - w[0]).collect()
}

/// Log class probabilities, `log(p + 1e-8)`.
pub fn ordinal_forward(score: f64, theta: &[f64]) -> Vec<f64> {
    ordinal_probabilities(score, theta)
        .into_iter()
        .map(|p| (p + LOG_FLOOR).ln())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrdinalHead {
    pub scorer: LinearModel,
    pub theta: Vec<f64>,
}

impl OrdinalHead {
    pub fn new(dim: usize, k: usize, class_weights: Vec<f64>) -> Self {
        OrdinalHead {
            scorer: LinearModel::zeros(dim, class_weights),
            theta: initial_theta(k),
        }
    }

    pub fn classes(&self) -> usize {
        self.theta.len() + 1
    }

    pub fn predict_proba(&self, x: &[f64]) -> Vec<f64> {
        ordinal_probabilities(self.scorer.score(x), &self.theta)
    }

    pub fn is_finite(&self) -> bool {
        self.scorer.is_finite() && self.theta.iter().all(|t| t.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrdinalGradient {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub theta: Vec<f64>,
}

/// Class-weighted mean negative log-likelihood over a batch and its
/// analytic gradient with respect to weights, bias and θ.
pub fn ordinal_loss_and_grad(head: &OrdinalHead, xs: &[&[f64]], labels: &[usize]) -> (f64, OrdinalGradient) {
    let k = head.classes();
    let dim = head.scorer.weights.len();
    let cuts = cutpoints(&head.theta);
    // dc_j/dθ_i: 1 for i = 0, σ(θ_i) for 1 <= i <= j, 0 otherwise.
    let sig_theta: Vec<f64> = head.theta.iter().map(|&t| sigmoid(t)).collect();
    let mut grad = OrdinalGradient {
        weights: vec![0.0; dim],
        bias: 0.0,
        theta: vec![0.0; k - 1],
    };
    let mut loss = 0.0;
    let mut wsum = 0.0;
    // Gradient of the loss with respect to each cutpoint for one sample.
    let mut dcut = vec![0.0; k - 1];
    for (x, &y) in xs.iter().zip(labels) {
        let w = head.scorer.class_weights[y];
        let f = head.scorer.score(x);
        let s = padded_cdf(f, &cuts);
        let p = s[y + 1] - s[y];
        loss += -w * (p + LOG_FLOOR).ln();
        wsum += w;
        let dl_dp = -w / (p + LOG_FLOOR);
        // ds_j/dc = s_j (1 - s_j), ds_j/df = -s_j (1 - s_j); s_0 and s_K are constant.
        let d = |j: usize| if j == 0 || j == k { 0.0 } else { s[j] * (1.0 - s[j]) };
        let (d_hi, d_lo) = (d(y + 1), d(y));
        let dl_df = dl_dp * (d_lo - d_hi);
        for (g, xv) in grad.weights.iter_mut().zip(x.iter()) {
            *g += dl_df * xv;
        }
        grad.bias += dl_df;
        dcut.iter_mut().for_each(|v| *v = 0.0);
        if y + 1 < k {
            dcut[y] += dl_dp * d_hi;
        }
        if y > 0 {
            dcut[y - 1] -= dl_dp * d_lo;
        }
        for (j, &dc) in dcut.iter().enumerate() {
            if dc == 0.0 {
                continue;
            }
            grad.theta[0] += dc;
            for (g, s) in grad.theta[1..=j].iter_mut().zip(&sig_theta[1..=j]) {
                *g += dc * s;
            }
        }
    }
    if wsum > 0.0 {
        loss /= wsum;
        grad.weights.iter_mut().for_each(|g| *g /= wsum);
        grad.bias /= wsum;
        grad.theta.iter_mut().for_each(|g| *g /= wsum);
    }
    (loss, grad)
}

/// Trains an ordinal head over `k` classes with Adam. Every class must
/// occur in `labels`.
pub fn train_ordinal(
    features: &[FeatureVector],
    labels: &[usize],
    k: usize,
    class_weights: &[f64],
    hp: &Hyperparams,
) -> Result<OrdinalHead> {
    hp.validate()?;
    if k < 2 {
        return Err(Error::validation("ordinal head needs at least two classes"));
    }
    let dim = check_features(features, labels.len())?;
    let mut seen = vec![false; k];
    for &y in labels {
        if y >= k {
            return Err(Error::validation(format!("label {y} outside 0..{k}")));
        }
        seen[y] = true;
    }
    if let Some(c) = seen.iter().position(|s| !s) {
        return Err(Error::validation(format!(
            "class {c} does not occur in the training labels"
        )));
    }
    if class_weights.len() != k || class_weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
        return Err(Error::validation(format!(
            "ordinal training needs {k} positive class weights"
        )));
    }
    let mut head = OrdinalHead::new(dim, k, class_weights.to_vec());
    let n_params = dim + 1 + (k - 1);
    let mut params = vec![0.0; n_params];
    params[dim + 1..].copy_from_slice(&head.theta);
    let mut opt = Adam::new(n_params, hp.lr, hp.beta1, hp.beta2, hp.eps);
    let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
    let mut flat = vec![0.0; n_params];
    for _ in 0..hp.epochs {
        let order = epoch_order(features.len(), &mut rng);
        for batch in order.chunks(hp.batch_size) {
            let xs: Vec<&[f64]> = batch.iter().map(|&i| features[i].as_slice()).collect();
            let ys: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            let (_, g) = ordinal_loss_and_grad(&head, &xs, &ys);
            flat[..dim].copy_from_slice(&g.weights);
            flat[dim] = g.bias;
            flat[dim + 1..].copy_from_slice(&g.theta);
            clip_grad_norm(&mut flat, hp.max_grad_norm);
            opt.step(&mut params, &flat);
            head.scorer.weights.copy_from_slice(&params[..dim]);
            head.scorer.bias = params[dim];
            head.theta.copy_from_slice(&params[dim + 1..]);
        }
    }
    if !head.is_finite() {
        return Err(Error::validation("training diverged"));
    }
    Ok(head)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn cutpoint_examples() {
        assert_eq!(cutpoints(&[0.0]), [0.0]);
        let c = cutpoints(&[0.0, 0.0]);
        assert_eq!(c[0], 0.0);
        assert!((c[1] - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn cutpoints_increase() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let theta: Vec<f64> = (0..6).map(|_| rng.random_range(-5.0..5.0)).collect();
            let c = cutpoints(&theta);
            assert!(c.windows(2).all(|w| w[0] < w[1]), "{theta:?}");
        }
    }

    #[test]
    fn softplus_is_stable() {
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
        assert_eq!(softplus(800.0), 800.0);
        assert!(softplus(-800.0) >= 0.0);
    }

    #[test]
    fn forward_examples() {
        let p = ordinal_probabilities(0.0, &[0.0]);
        assert_eq!(p, [0.5, 0.5]);
        let lp = ordinal_forward(0.0, &[0.0]);
        assert!((lp[0] - (0.5 + LOG_FLOOR).ln()).abs() < 1e-15);
        let far = ordinal_probabilities(1e6, &[-1.0, 0.0, 1.0]);
        assert!((far[3] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn probabilities_form_a_distribution() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..1000 {
            let theta: Vec<f64> = (0..6).map(|_| rng.random_range(-5.0..5.0)).collect();
            let f = rng.random_range(-20.0..20.0);
            let p = ordinal_probabilities(f, &theta);
            assert_eq!(p.len(), 7);
            assert!(p.iter().all(|&v| v >= 0.0));
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn initial_theta_is_linspace() {
        assert_eq!(initial_theta(2), [-1.0]);
        assert_eq!(initial_theta(3), [-1.0, 1.0]);
        let t = initial_theta(5);
        for (a, b) in t.iter().zip([-1.0, -1.0 / 3.0, 1.0 / 3.0, 1.0]) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
    }

    #[test]
    fn analytic_gradient_matches_finite_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for _ in 0..100 {
            let k = rng.random_range(2..=7usize);
            let dim = 4;
            let cw: Vec<f64> = (0..k).map(|_| rng.random_range(0.5..3.0)).collect();
            let mut head = OrdinalHead::new(dim, k, cw);
            head.scorer.weights = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            head.scorer.bias = rng.random_range(-1.0..1.0);
            head.theta = (0..k - 1).map(|_| rng.random_range(-2.0..2.0)).collect();
            let x: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            let y = rng.random_range(0..k);
            let (_, g) = ordinal_loss_and_grad(&head, &[&x], &[y]);
            let loss = |hd: &OrdinalHead| ordinal_loss_and_grad(hd, &[&x], &[y]).0;
            let mut check = |analytic: f64, set: &dyn Fn(&mut OrdinalHead, f64)| {
                let mut plus = head.clone();
                set(&mut plus, h);
                let mut minus = head.clone();
                set(&mut minus, -h);
                let numeric = (loss(&plus) - loss(&minus)) / (2.0 * h);
                worst = worst.max(rel_err(analytic, numeric));
            };
            for i in 0..dim {
                check(g.weights[i], &|hd, d| hd.scorer.weights[i] += d);
            }
            check(g.bias, &|hd, d| hd.scorer.bias += d);
            for i in 0..k - 1 {
                check(g.theta[i], &|hd, d| hd.theta[i] += d);
            }
        }
        assert!(worst < 1e-4, "max relative error {worst}");
    }

    #[test]
    fn monotone_one_dimensional_set() {
        let k = 4;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for i in 0..400 {
            let y = i % k;
            let v = y as f64 + rng.random_range(-0.3..0.3);
            xs.push(FeatureVector(vec![v]));
            ys.push(y);
        }
        let hp = Hyperparams {
            lr: 0.05,
            epochs: 80,
            batch_size: 16,
            ..Hyperparams::default()
        };
        let head = train_ordinal(&xs, &ys, k, &vec![1.0; k], &hp).unwrap();
        let within = xs
            .iter()
            .zip(&ys)
            .filter(|(x, &y)| {
                let p = head.predict_proba(x.as_slice());
                let arg = super::super::evaluate::argmax(&p);
                arg.abs_diff(y) <= 1
            })
            .count();
        assert!(within as f64 / 400.0 >= 0.95, "±1 accuracy {within}/400");
    }

    #[test]
    fn missing_class_rejected() {
        let xs = vec![FeatureVector(vec![1.0]); 3];
        assert!(train_ordinal(&xs, &[1, 1, 1], 3, &[1.0; 3], &Hyperparams::default()).is_err());
        assert!(train_ordinal(&xs, &[0, 1, 1], 3, &[1.0; 3], &Hyperparams::default()).is_err());
    }
}

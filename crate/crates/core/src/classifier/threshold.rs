use crate::error::{Error, Result};

/// The sweep visits `τ = i / GRID_STEPS` for `i` in `0..=GRID_STEPS`.
pub const GRID_STEPS: u32 = 1000;

fn grid(i: u32) -> f64 {
    i as f64 / GRID_STEPS as f64
}

/// F1 of predicting positive when `score >= tau`; 0 when nothing is
/// predicted and nothing is positive.
pub fn f1_at(scores: &[f64], labels: &[u8], tau: f64) -> f64 {
    let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
    for (&s, &y) in scores.iter().zip(labels) {
        match (s >= tau, y == 1) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            _ => {}
        }
    }
    let den = 2 * tp + fp + fn_;
    if den == 0 {
        0.0
    } else {
        2.0 * tp as f64 / den as f64
    }
}

/// The grid threshold maximizing F1, ties going to the smaller τ. F1 values
/// are compared as exact fractions `2TP / (2TP + FP + FN)`.
pub fn tune_threshold(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::validation("threshold sweep needs at least one score"));
    }
    if scores.len() != labels.len() {
        return Err(Error::Cardinality {
            expected: scores.len(),
            actual: labels.len(),
        });
    }
    if scores.iter().any(|s| !s.is_finite()) || labels.iter().any(|&y| y > 1) {
        return Err(Error::validation("scores must be finite and labels 0 or 1"));
    }
    let mut all: Vec<f64> = scores.to_vec();
    all.sort_by(f64::total_cmp);
    let mut pos: Vec<f64> = scores
        .iter()
        .zip(labels)
        .filter(|(_, &y)| y == 1)
        .map(|(&s, _)| s)
        .collect();
    if pos.is_empty() {
        return Err(Error::validation("threshold sweep needs at least one positive label"));
    }
    pos.sort_by(f64::total_cmp);
    let total_pos = pos.len() as u64;
    let at_least = |v: &[f64], tau: f64| (v.len() - v.partition_point(|&s| s < tau)) as u64;

    let mut best: Option<(u32, u64, u64)> = None;
    for i in 0..=GRID_STEPS {
        let tau = grid(i);
        let predicted = at_least(&all, tau);
        let tp = at_least(&pos, tau);
        // 2TP + FP + FN = predicted + total positives.
        let (num, den) = (2 * tp, predicted + total_pos);
        let better = match best {
            None => true,
            Some((_, bn, bd)) => num as u128 * bd as u128 > bn as u128 * den as u128,
        };
        if better {
            best = Some((i, num, den));
        }
    }
    Ok(grid(best.map_or(0, |b| b.0)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn oracle_max(scores: &[f64], labels: &[u8]) -> f64 {
        (0..=GRID_STEPS)
            .map(|i| f1_at(scores, labels, grid(i)))
            .fold(f64::MIN, f64::max)
    }

    #[test]
    fn separated_scores() {
        let scores = [0.2, 0.2, 0.8, 0.8];
        let labels = [0, 0, 1, 1];
        let tau = tune_threshold(&scores, &labels).unwrap();
        assert_eq!(tau, 0.201);
        assert_eq!(f1_at(&scores, &labels, tau), 1.0);
    }

    #[test]
    fn all_positive() {
        assert_eq!(tune_threshold(&[0.5; 4], &[1; 4]).unwrap(), 0.0);
    }

    #[test]
    fn errors() {
        assert!(tune_threshold(&[], &[]).is_err());
        assert!(tune_threshold(&[0.1, 0.2], &[0, 0]).is_err());
        assert!(tune_threshold(&[0.1], &[0, 1]).is_err());
    }

    proptest! {
        #[test]
        fn matches_exhaustive_grid(data in prop::collection::vec((0u32..=1000, 0u8..=1), 1..40)) {
            prop_assume!(data.iter().any(|d| d.1 == 1));
            let scores: Vec<f64> = data.iter().map(|d| d.0 as f64 / 1000.0).collect();
            let labels: Vec<u8> = data.iter().map(|d| d.1).collect();
            let tau = tune_threshold(&scores, &labels).unwrap();
            let best = oracle_max(&scores, &labels);
            prop_assert_eq!(f1_at(&scores, &labels, tau), best);
            // Smallest maximizing τ.
            for i in 0..(tau * 1000.0).round() as u32 {
                prop_assert!(f1_at(&scores, &labels, grid(i)) < best);
            }
        }

        #[test]
        fn shift_keeps_max_f1(data in prop::collection::vec((0u32..=800, 0u8..=1), 1..40), shift in 0u32..=200) {
            prop_assume!(data.iter().any(|d| d.1 == 1));
            let scores: Vec<f64> = data.iter().map(|d| d.0 as f64 / 1000.0).collect();
            let shifted: Vec<f64> = data.iter().map(|d| (d.0 + shift) as f64 / 1000.0).collect();
            let labels: Vec<u8> = data.iter().map(|d| d.1).collect();
            let a = tune_threshold(&scores, &labels).unwrap();
            let b = tune_threshold(&shifted, &labels).unwrap();
            prop_assert_eq!(f1_at(&scores, &labels, a), f1_at(&shifted, &labels, b));
        }
    }
}

//! Corpus-level accuracy, agreement and reliability statistics.
//!
//! Accuracy metrics compare each agent's answer with the ground truth.
//! Agreement metrics ignore correctness and look only at how the `n + 1`
//! answers to a query distribute over answer states; answers are grouped
//! exactly after [`normalize`](crate::matcher::normalize). All variances are
//! population variances.

mod report;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

pub use report::{group_by_scenario, render_table, write_csv, GroupedReport, CSV_HEADER};

use crate::error::{Error, Result};
use crate::exec::{self, ExecMode};
use crate::matcher::{leading_choice_letter, normalize};
use crate::record::{Scenario, SimulationRecord};

/// Answers of the `n + 1` raters for one query, grouped into states.
#[derive(Debug, Clone, PartialEq)]
pub struct AnswerDistribution {
    /// State key per rater, in perturbation order.
    keys: Vec<String>,
    counts: BTreeMap<String, usize>,
    /// Number of allowed answer states `k_j`.
    states: usize,
}

impl AnswerDistribution {
    /// Groups pre-computed state keys. `allowed_states` is the size of a
    /// closed answer set (e.g. number of choices); when absent, or smaller
    /// than what was observed, the number of distinct keys is used.
    pub fn from_keys<S: AsRef<str>>(keys: &[S], allowed_states: Option<usize>) -> Result<Self> {
        if keys.is_empty() {
            return Err(Error::validation("answer distribution without raters"));
        }
        let keys: Vec<String> = keys.iter().map(|k| k.as_ref().to_string()).collect();
        let mut counts = BTreeMap::new();
        for k in &keys {
            *counts.entry(k.clone()).or_insert(0) += 1;
        }
        let states = allowed_states.unwrap_or(0).max(counts.len());
        Ok(AnswerDistribution { keys, counts, states })
    }

    /// States for a simulation record: multiple-choice answers that open
    /// with a valid letter collapse onto that letter, everything else onto
    /// its normalized text. Failed agents share the empty state.
    pub fn from_record(record: &SimulationRecord) -> Self {
        let choices = record.query.choices.as_deref();
        let keys: Vec<String> = record
            .outputs
            .iter()
            .map(|o| {
                if !o.is_ok() {
                    return String::new();
                }
                if let (Scenario::MultipleChoice, Some(choices)) = (record.query.scenario, choices) {
                    if let Some(letter) = leading_choice_letter(&o.text, choices.len()) {
                        return format!("choice:{letter}");
                    }
                }
                normalize(&o.text)
            })
            .collect();
        let allowed = match record.query.scenario {
            Scenario::MultipleChoice => choices.map(<[String]>::len),
            _ => None,
        };
        // keys is non-empty for any assembled record
        AnswerDistribution::from_keys(&keys, allowed).expect("record has at least one output")
    }

    pub fn raters(&self) -> usize {
        self.keys.len()
    }

    pub fn states(&self) -> usize {
        self.states
    }

    pub fn counts(&self) -> &BTreeMap<String, usize> {
        &self.counts
    }

    /// Index of the first rater of the most frequent state; ties go to the
    /// state produced by the lowest perturbation index.
    pub fn mode_representative(&self) -> usize {
        let mut best = (0usize, 0usize);
        for (i, key) in self.keys.iter().enumerate() {
            let c = self.counts[key];
            if c > best.0 {
                best = (c, i);
            }
        }
        best.1
    }

    fn proportions(&self) -> impl Iterator<Item = f64> + '_ {
        let r = self.raters() as f64;
        self.counts.values().map(move |&f| f as f64 / r)
    }

    /// `1 - H / log(k_j)`; unanimity (k_j = 1) is certainty 1.
    pub fn normalized_certainty(&self) -> f64 {
        if self.states <= 1 {
            return 1.0;
        }
        let plogp: f64 = self.proportions().map(|p| p * p.ln()).sum();
        1.0 + plogp / (self.states as f64).ln()
    }

    /// Reversed Gibbs M2 for one query; k_j = 1 contributes 1.
    pub fn gibbs_m2(&self) -> f64 {
        if self.states <= 1 {
            return 1.0;
        }
        let k = self.states as f64;
        let sum_sq: f64 = self.proportions().map(|p| p * p).sum();
        1.0 - k / (k - 1.0) * (1.0 - sum_sq)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccuracyBounds {
    pub base_accuracy: f64,
    pub mode_accuracy: f64,
    pub lower_bound: f64,
    pub upper_bound: f64,
}

fn check_raters(rows: impl Iterator<Item = usize>) -> Result<usize> {
    let mut raters = None;
    let mut count = 0usize;
    for r in rows {
        count += 1;
        match raters {
            None => raters = Some(r),
            Some(prev) if prev != r => {
                return Err(Error::validation(format!(
                    "records disagree on the number of raters ({prev} vs {r})"
                )))
            }
            _ => {}
        }
    }
    if count == 0 {
        return Err(Error::validation("metrics over an empty corpus"));
    }
    Ok(raters.unwrap_or(0))
}

/// Accuracy of the original query, the mode vote, and the all-correct /
/// any-correct bounds.
pub fn accuracy_bounds(records: &[SimulationRecord]) -> Result<AccuracyBounds> {
    let dists: Vec<AnswerDistribution> = records.iter().map(AnswerDistribution::from_record).collect();
    accuracy_bounds_from(records, &dists)
}

fn accuracy_bounds_from(records: &[SimulationRecord], dists: &[AnswerDistribution]) -> Result<AccuracyBounds> {
    check_raters(records.iter().map(SimulationRecord::raters))?;
    let m = records.len() as f64;
    let mut base = 0usize;
    let mut lower = 0usize;
    let mut upper = 0usize;
    let mut mode = 0usize;
    for (rec, dist) in records.iter().zip(dists) {
        let ind = &rec.indicators;
        base += usize::from(ind[0] == 0);
        lower += usize::from(ind.iter().all(|&i| i == 0));
        upper += usize::from(ind.contains(&0));
        mode += usize::from(ind[dist.mode_representative()] == 0);
    }
    Ok(AccuracyBounds {
        base_accuracy: base as f64 / m,
        mode_accuracy: mode as f64 / m,
        lower_bound: lower as f64 / m,
        upper_bound: upper as f64 / m,
    })
}

/// Chance that at least one of `n + 1` uniform guesses over `k` options is right.
pub fn random_guess_upper(k: u32, n: u32) -> Result<f64> {
    if k < 2 {
        return Err(Error::validation(format!("random-guess bound needs k >= 2, got {k}")));
    }
    let miss = (k - 1) as f64 / k as f64;
    Ok(1.0 - miss.powi(n as i32 + 1))
}

/// Chance that all `n + 1` uniform guesses over `k` options are right.
pub fn random_guess_lower(k: u32, n: u32) -> Result<f64> {
    if k < 2 {
        return Err(Error::validation(format!("random-guess bound needs k >= 2, got {k}")));
    }
    Ok((1.0 / k as f64).powi(n as i32 + 1))
}

/// Mean fraction of correct agents per query.
pub fn item_difficulty(records: &[SimulationRecord]) -> Result<f64> {
    let rows: Vec<&[u8]> = records.iter().map(|r| r.indicators.as_slice()).collect();
    item_difficulty_from_indicators(&rows)
}

pub fn item_difficulty_from_indicators<R: AsRef<[u8]>>(rows: &[R]) -> Result<f64> {
    if rows.is_empty() {
        return Err(Error::validation("item difficulty of an empty corpus"));
    }
    let mut total = 0.0;
    for row in rows {
        let row = row.as_ref();
        if row.is_empty() {
            return Err(Error::validation("record without raters"));
        }
        let correct = row.iter().filter(|&&i| i == 0).count();
        total += correct as f64 / row.len() as f64;
    }
    Ok(total / rows.len() as f64)
}

pub fn mean_normalized_certainty(dists: &[AnswerDistribution]) -> Result<f64> {
    if dists.is_empty() {
        return Err(Error::validation("certainty of an empty corpus"));
    }
    Ok(dists.iter().map(AnswerDistribution::normalized_certainty).sum::<f64>() / dists.len() as f64)
}

pub fn gibbs_m2(dists: &[AnswerDistribution]) -> Result<f64> {
    if dists.is_empty() {
        return Err(Error::validation("Gibbs M2 of an empty corpus"));
    }
    Ok(dists.iter().map(AnswerDistribution::gibbs_m2).sum::<f64>() / dists.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FleissKappa {
    pub kappa: f64,
    pub observed: f64,
    pub expected: f64,
    /// Every rating fell into one category: chance agreement is 1 and
    /// kappa is reported as 1.
    pub degenerate: bool,
}

/// Fleiss' kappa over the global union of observed answer states.
pub fn fleiss_kappa(dists: &[AnswerDistribution]) -> Result<FleissKappa> {
    if dists.len() < 2 {
        return Err(Error::validation("Fleiss kappa needs at least 2 records"));
    }
    let r = check_raters(dists.iter().map(AnswerDistribution::raters))?;
    if r < 2 {
        return Err(Error::validation("Fleiss kappa needs at least 2 raters"));
    }
    let m = dists.len();
    let mut totals: BTreeMap<&str, usize> = BTreeMap::new();
    let mut observed = 0.0;
    for d in dists {
        let sum_sq: usize = d.counts.values().map(|f| f * f).sum();
        observed += (sum_sq - r) as f64 / (r * (r - 1)) as f64;
        for (k, &f) in &d.counts {
            *totals.entry(k.as_str()).or_insert(0) += f;
        }
    }
    let observed = observed / m as f64;
    if totals.len() == 1 {
        return Ok(FleissKappa {
            kappa: 1.0,
            observed,
            expected: 1.0,
            degenerate: true,
        });
    }
    let all = (m * r) as f64;
    let expected: f64 = totals.values().map(|&t| (t as f64 / all).powi(2)).sum();
    Ok(FleissKappa {
        kappa: (observed - expected) / (1.0 - expected),
        observed,
        expected,
        degenerate: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum CronbachAlpha {
    Value {
        /// Capped at 1.
        alpha: f64,
        raw: f64,
    },
    /// Every rater got the same total while individual queries still
    /// split the raters; alpha is undefined.
    ZeroTotalVariance,
}

impl CronbachAlpha {
    pub fn value(self) -> Option<f64> {
        match self {
            CronbachAlpha::Value { alpha, .. } => Some(alpha),
            CronbachAlpha::ZeroTotalVariance => None,
        }
    }

    pub fn raw(self) -> Option<f64> {
        match self {
            CronbachAlpha::Value { raw, .. } => Some(raw),
            CronbachAlpha::ZeroTotalVariance => None,
        }
    }
}

/// Cronbach's alpha over an `m x (n + 1)` matrix of 0/1 correctness scores
/// (1 = correct). Rows are queries, columns are raters.
pub fn cronbach_alpha<R: AsRef<[u8]>>(correctness: &[R]) -> Result<CronbachAlpha> {
    let m = correctness.len();
    if m < 2 {
        return Err(Error::validation("Cronbach's alpha needs at least 2 records"));
    }
    let r = check_raters(correctness.iter().map(|row| row.as_ref().len()))?;
    if r < 2 {
        return Err(Error::validation("Cronbach's alpha needs at least 2 raters"));
    }
    let mut column_totals = vec![0u64; r];
    // sum over rows of c (r - c); each row variance is c (r - c) / r^2
    let mut within = 0u64;
    for row in correctness {
        let row = row.as_ref();
        let mut c = 0u64;
        for (j, &v) in row.iter().enumerate() {
            if v > 1 {
                return Err(Error::validation("correctness scores must be 0 or 1"));
            }
            c += v as u64;
            column_totals[j] += v as u64;
        }
        within += c * (r as u64 - c);
    }
    let rr = r as u64;
    let sum: u64 = column_totals.iter().sum();
    let sum_sq: u64 = column_totals.iter().map(|t| t * t).sum();
    // population variance of the totals is (r * sum_sq - sum^2) / r^2
    let between = rr * sum_sq - sum * sum;
    if within == 0 {
        // every query answered identically by all raters: perfectly consistent
        let raw = m as f64 / (m - 1) as f64;
        return Ok(CronbachAlpha::Value { alpha: 1.0, raw });
    }
    if between == 0 {
        return Ok(CronbachAlpha::ZeroTotalVariance);
    }
    let ratio = within as f64 / between as f64;
    let raw = m as f64 / (m - 1) as f64 * (1.0 - ratio);
    Ok(CronbachAlpha::Value {
        alpha: raw.min(1.0),
        raw,
    })
}

/// Correctness matrix (1 = correct) from stored indicators.
pub fn correctness_matrix(records: &[SimulationRecord]) -> Vec<Vec<u8>> {
    records
        .iter()
        .map(|r| r.indicators.iter().map(|&i| 1 - i).collect())
        .collect()
}

/// Full metric bundle for one corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub base_accuracy: f64,
    pub mode_accuracy: f64,
    pub lower_bound: f64,
    pub upper_bound: f64,
    pub item_difficulty: f64,
    pub mean_certainty: f64,
    pub gibbs_m2: f64,
    /// Absent for corpora with fewer than 2 records.
    pub fleiss_kappa: Option<f64>,
    pub kappa_degenerate: bool,
    /// Absent for fewer than 2 records or zero total variance.
    pub cronbach_alpha: Option<f64>,
    pub cronbach_alpha_raw: Option<f64>,
    pub m: usize,
    pub n_plus_1: usize,
}

impl AgreementReport {
    pub fn compute(records: &[SimulationRecord], mode: ExecMode) -> Result<Self> {
        let n_plus_1 = check_raters(records.iter().map(SimulationRecord::raters))?;
        let dists = exec::map(mode, records, AnswerDistribution::from_record);
        let bounds = accuracy_bounds_from(records, &dists)?;
        let (kappa, degenerate) = if records.len() >= 2 && n_plus_1 >= 2 {
            let k = fleiss_kappa(&dists)?;
            (Some(k.kappa), k.degenerate)
        } else {
            (None, false)
        };
        let alpha = if records.len() >= 2 && n_plus_1 >= 2 {
            cronbach_alpha(&correctness_matrix(records))?
        } else {
            CronbachAlpha::ZeroTotalVariance
        };
        Ok(AgreementReport {
            base_accuracy: bounds.base_accuracy,
            mode_accuracy: bounds.mode_accuracy,
            lower_bound: bounds.lower_bound,
            upper_bound: bounds.upper_bound,
            item_difficulty: item_difficulty(records)?,
            mean_certainty: mean_normalized_certainty(&dists)?,
            gibbs_m2: gibbs_m2(&dists)?,
            fleiss_kappa: kappa,
            kappa_degenerate: degenerate,
            cronbach_alpha: alpha.value(),
            cronbach_alpha_raw: alpha.raw(),
            m: records.len(),
            n_plus_1,
        })
    }
}

/// Distinct observed categories across a corpus.
pub fn category_count(dists: &[AnswerDistribution]) -> usize {
    dists
        .iter()
        .flat_map(|d| d.counts.keys())
        .collect::<BTreeSet<_>>()
        .len()
}

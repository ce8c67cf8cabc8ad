use std::collections::BTreeMap;
use std::io::Write;

use crate::error::Result;
use crate::exec::ExecMode;
use crate::record::{Scenario, SimulationRecord};

use super::AgreementReport;

/// Fixed CSV header. New metrics are appended at the end.
pub const CSV_HEADER: [&str; 12] = [
    "group",
    "m",
    "n_plus_1",
    "base_accuracy",
    "mode_accuracy",
    "lower_bound",
    "upper_bound",
    "item_difficulty",
    "mean_certainty",
    "gibbs_m2",
    "fleiss_kappa",
    "cronbach_alpha",
];

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format!("{x:.6}"))
}

fn row(group: &str, r: &AgreementReport) -> Vec<String> {
    vec![
        group.to_string(),
        r.m.to_string(),
        r.n_plus_1.to_string(),
        format!("{:.6}", r.base_accuracy),
        format!("{:.6}", r.mode_accuracy),
        format!("{:.6}", r.lower_bound),
        format!("{:.6}", r.upper_bound),
        format!("{:.6}", r.item_difficulty),
        format!("{:.6}", r.mean_certainty),
        format!("{:.6}", r.gibbs_m2),
        fmt_opt(r.fleiss_kappa),
        fmt_opt(r.cronbach_alpha),
    ]
}

/// Per-scenario reports plus an m-weighted average row.
#[derive(Debug, Clone)]
pub struct GroupedReport {
    pub groups: Vec<(String, AgreementReport)>,
    pub weighted: AgreementReport,
}

fn weighted_mean(items: &[(f64, Option<f64>)]) -> Option<f64> {
    let (num, den) = items
        .iter()
        .filter_map(|&(w, v)| v.map(|v| (w * v, w)))
        .fold((0.0, 0.0), |acc, x| (acc.0 + x.0, acc.1 + x.1));
    (den > 0.0).then(|| num / den)
}

pub fn group_by_scenario(records: &[SimulationRecord], mode: ExecMode) -> Result<GroupedReport> {
    let mut buckets: BTreeMap<Scenario, Vec<SimulationRecord>> = BTreeMap::new();
    for r in records {
        buckets.entry(r.query.scenario).or_default().push(r.clone());
    }
    let mut groups = Vec::new();
    for (scenario, recs) in buckets {
        groups.push((scenario.as_str().to_string(), AgreementReport::compute(&recs, mode)?));
    }
    let w = |f: fn(&AgreementReport) -> Option<f64>| {
        let items: Vec<(f64, Option<f64>)> = groups.iter().map(|(_, r)| (r.m as f64, f(r))).collect();
        weighted_mean(&items)
    };
    let n_plus_1 = groups.first().map_or(0, |(_, r)| r.n_plus_1);
    let weighted = AgreementReport {
        base_accuracy: w(|r| Some(r.base_accuracy)).unwrap_or(f64::NAN),
        mode_accuracy: w(|r| Some(r.mode_accuracy)).unwrap_or(f64::NAN),
        lower_bound: w(|r| Some(r.lower_bound)).unwrap_or(f64::NAN),
        upper_bound: w(|r| Some(r.upper_bound)).unwrap_or(f64::NAN),
        item_difficulty: w(|r| Some(r.item_difficulty)).unwrap_or(f64::NAN),
        mean_certainty: w(|r| Some(r.mean_certainty)).unwrap_or(f64::NAN),
        gibbs_m2: w(|r| Some(r.gibbs_m2)).unwrap_or(f64::NAN),
        fleiss_kappa: w(|r| r.fleiss_kappa),
        kappa_degenerate: false,
        cronbach_alpha: w(|r| r.cronbach_alpha),
        cronbach_alpha_raw: w(|r| r.cronbach_alpha_raw),
        m: records.len(),
        n_plus_1,
    };
    Ok(GroupedReport { groups, weighted })
}

/// Writes the header and one row per `(group, report)`.
pub fn write_csv<W: Write>(out: W, rows: &[(&str, &AgreementReport)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| crate::error::Error::Io(std::io::Error::other(e));
    w.write_record(CSV_HEADER).map_err(csv_err)?;
    for (group, r) in rows {
        w.write_record(row(group, r)).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Markdown table with one column per group.
pub fn render_table(rows: &[(&str, &AgreementReport)]) -> String {
    let mut out = String::from("| metric |");
    for (g, _) in rows {
        out.push_str(&format!(" {g} |"));
    }
    out.push_str("\n|---|");
    for _ in rows {
        out.push_str("---:|");
    }
    out.push('\n');
    let cells: Vec<Vec<String>> = rows.iter().map(|(g, r)| row(g, r)).collect();
    for (i, name) in CSV_HEADER.iter().enumerate().skip(1) {
        out.push_str(&format!("| {name} |"));
        for c in &cells {
            out.push_str(&format!(" {} |", c[i]));
        }
        out.push('\n');
    }
    out
}

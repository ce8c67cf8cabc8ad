//! Label tables, class histograms and the summary report bundle.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labeler::{class_label_text, HallucinationRate};
use crate::metrics::AgreementReport;
use crate::record::{Outcome, Scenario, SimulationRecord};

/// One labeled query. Record-store lines parse as label rows too, so
/// training can read either file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelRow {
    pub id: String,
    pub scenario: Scenario,
    pub text: String,
    pub p_h_num: u32,
    pub p_h_den: u32,
    pub binary_label: u8,
    pub class_label: usize,
    pub outcome: Outcome,
}

impl LabelRow {
    pub fn from_record(r: &SimulationRecord) -> Self {
        LabelRow {
            id: r.query.id.clone(),
            scenario: r.query.scenario,
            text: r.query.text.clone(),
            p_h_num: r.p_h.numerator(),
            p_h_den: r.p_h.denominator(),
            binary_label: r.binary_label,
            class_label: r.class_label,
            outcome: r.outcome,
        }
    }

    fn check(&self) -> Result<()> {
        let p = HallucinationRate::new(self.p_h_num, self.p_h_den)?;
        if self.binary_label != u8::from(!p.is_zero()) || self.class_label != self.p_h_num as usize {
            return Err(Error::validation(format!(
                "labels of {} disagree with p_h {p}",
                self.id
            )));
        }
        Ok(())
    }
}

/// Reads label rows (or full records) from JSONL, checking label
/// consistency.
pub fn read_label_rows(path: &Path) -> Result<Vec<LabelRow>> {
    let file = File::open(path).map_err(|e| Error::file(path, e))?;
    let mut rows = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::file(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let row: LabelRow = serde_json::from_str(&line)
            .map_err(|e| Error::validation(format!("{}:{}: {e}", path.display(), lineno + 1)))?;
        row.check()
            .map_err(|e| Error::validation(format!("{}:{}: {e}", path.display(), lineno + 1)))?;
        rows.push(row);
    }
    Ok(rows)
}

pub fn write_label_rows(path: &Path, rows: &[LabelRow]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::file(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    for r in rows {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Counts per expected class `0..=n+1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub n_plus_1: usize,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn from_classes(classes: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let pairs: Vec<(usize, usize)> = classes.into_iter().collect();
        let n_plus_1 = pairs.first().map_or(0, |p| p.1);
        if pairs.iter().any(|p| p.1 != n_plus_1) {
            return Err(Error::validation("records mix different numbers of agents"));
        }
        let mut counts = vec![0; n_plus_1 + 1];
        for (c, _) in pairs {
            if c > n_plus_1 {
                return Err(Error::validation(format!("class {c} above {n_plus_1}")));
            }
            counts[c] += 1;
        }
        Ok(Histogram { n_plus_1, counts })
    }

    pub fn from_records(records: &[SimulationRecord]) -> Result<Self> {
        Histogram::from_classes(records.iter().map(|r| (r.class_label, r.raters())))
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    /// `(no, yes)`: class 0 versus every other class.
    pub fn binary_counts(&self) -> (usize, usize) {
        let no = self.counts.first().copied().unwrap_or(0);
        (no, self.total() - no)
    }

    fn label(&self, class: usize) -> String {
        class_label_text(class, self.n_plus_1.saturating_sub(1))
    }

    pub const CSV_HEADER: [&'static str; 4] = ["class", "label", "count", "fraction"];

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
        w.write_record(Self::CSV_HEADER).map_err(csv_err)?;
        let total = self.total().max(1) as f64;
        for (c, &count) in self.counts.iter().enumerate() {
            w.write_record([
                c.to_string(),
                self.label(c),
                count.to_string(),
                format!("{:.6}", count as f64 / total),
            ])
            .map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn render(&self) -> String {
        let mut out = String::from("| class | label | count | fraction |\n|---:|---|---:|---:|\n");
        let total = self.total().max(1) as f64;
        for (c, &count) in self.counts.iter().enumerate() {
            out.push_str(&format!(
                "| {c} | {} | {count} | {:.4} |\n",
                self.label(c),
                count as f64 / total
            ));
        }
        out
    }
}

/// Everything `report` emits about one record store.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportBundle {
    pub agreement: AgreementReport,
    pub label_histogram: Histogram,
    /// `(no, yes)` hallucination counts.
    pub binary_counts: (usize, usize),
    pub outcome_counts: BTreeMap<Outcome, usize>,
    pub run_manifest: Option<PathBuf>,
}

impl ReportBundle {
    pub fn build(records: &[SimulationRecord], agreement: AgreementReport, manifest: Option<PathBuf>) -> Result<Self> {
        let label_histogram = Histogram::from_records(records)?;
        let mut outcome_counts: BTreeMap<Outcome, usize> = Outcome::ALL.iter().map(|&o| (o, 0)).collect();
        for r in records {
            *outcome_counts.entry(r.outcome).or_default() += 1;
        }
        Ok(ReportBundle {
            binary_counts: label_histogram.binary_counts(),
            agreement,
            label_histogram,
            outcome_counts,
            run_manifest: manifest,
        })
    }

    pub fn render(&self) -> String {
        let mut out = String::from("## Agreement\n\n");
        out.push_str(&crate::metrics::render_table(&[("all", &self.agreement)]));
        out.push_str("\n## Expected hallucination class\n\n");
        out.push_str(&self.label_histogram.render());
        let (no, yes) = self.binary_counts;
        out.push_str(&format!(
            "\n## Binary labels\n\n| label | count |\n|---|---:|\n| no | {no} |\n| yes | {yes} |\n"
        ));
        out.push_str("\n## Outcomes\n\n| outcome | count |\n|---|---:|\n");
        for (o, c) in &self.outcome_counts {
            out.push_str(&format!("| {} | {c} |\n", o.as_str()));
        }
        if let Some(m) = &self.run_manifest {
            out.push_str(&format!("\nRun manifest: {}\n", m.display()));
        }
        out
    }
}

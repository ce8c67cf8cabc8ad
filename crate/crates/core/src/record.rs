//! Domain types shared by the whole pipeline.
//!
//! A [`QueryRecord`] is one dataset item. The orchestrator turns it into a
//! [`PerturbationSet`] (original query at index 0 followed by `n` rewrites),
//! collects one [`AgentOutput`] per variant and folds everything into a
//! [`SimulationRecord`], which is what the JSONL store persists.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labeler::{self, HallucinationRate};

/// Answering regime of a query.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    Extractive,
    MultipleChoice,
    Abstractive,
}

impl Scenario {
    pub const ALL: [Scenario; 3] = [Scenario::Extractive, Scenario::MultipleChoice, Scenario::Abstractive];

    /// Upper-case tag used for scenario encoding.
    pub fn tag(self) -> &'static str {
        match self {
            Scenario::Extractive => "EXTRACTIVE",
            Scenario::MultipleChoice => "MULTIPLE CHOICE",
            Scenario::Abstractive => "ABSTRACTIVE",
        }
    }

    /// Position of the scenario in the one-hot feature block.
    pub fn index(self) -> usize {
        match self {
            Scenario::Extractive => 0,
            Scenario::MultipleChoice => 1,
            Scenario::Abstractive => 2,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::Extractive => "extractive",
            Scenario::MultipleChoice => "multiple_choice",
            Scenario::Abstractive => "abstractive",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Letter label for the choice at `index` (A, B, C, ...).
pub fn choice_letter(index: usize) -> String {
    let mut out = String::new();
    let mut i = index;
    loop {
        out.insert(0, (b'A' + (i % 26) as u8) as char);
        if i < 26 {
            break;
        }
        i = i / 26 - 1;
    }
    out
}

/// One dataset item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub id: String,
    pub scenario: Scenario,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub choices: Option<Vec<String>>,
    pub ground_truth: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub choice_label: Option<String>,
}

impl QueryRecord {
    pub fn abstractive(id: impl Into<String>, text: impl Into<String>, truth: impl Into<String>) -> Self {
        QueryRecord {
            id: id.into(),
            scenario: Scenario::Abstractive,
            text: text.into(),
            context: None,
            choices: None,
            ground_truth: truth.into(),
            choice_label: None,
        }
    }

    pub fn extractive(
        id: impl Into<String>,
        text: impl Into<String>,
        context: impl Into<String>,
        truth: impl Into<String>,
    ) -> Self {
        QueryRecord {
            id: id.into(),
            scenario: Scenario::Extractive,
            text: text.into(),
            context: Some(context.into()),
            choices: None,
            ground_truth: truth.into(),
            choice_label: None,
        }
    }

    /// Multiple-choice record; the choice label is derived from the position
    /// of `truth` in `choices`.
    pub fn multiple_choice(
        id: impl Into<String>,
        text: impl Into<String>,
        choices: Vec<String>,
        truth: impl Into<String>,
    ) -> Self {
        let truth = truth.into();
        let choice_label = choices.iter().position(|c| *c == truth).map(choice_letter);
        QueryRecord {
            id: id.into(),
            scenario: Scenario::MultipleChoice,
            text: text.into(),
            context: None,
            choices: Some(choices),
            ground_truth: truth,
            choice_label,
        }
    }

    /// Checks the scenario invariants and fills in a missing choice label.
    pub fn validated(mut self) -> Result<Self> {
        if self.text.trim().is_empty() {
            return Err(Error::validation(format!("record {}: empty query text", self.id)));
        }
        match self.scenario {
            Scenario::Extractive => {
                if self.context.is_none() {
                    return Err(Error::validation(format!(
                        "record {}: extractive record without context",
                        self.id
                    )));
                }
                if self.choices.is_some() {
                    return Err(Error::validation(format!(
                        "record {}: extractive record with choices",
                        self.id
                    )));
                }
            }
            Scenario::MultipleChoice => {
                let choices = self.choices.as_ref().ok_or_else(|| {
                    Error::validation(format!("record {}: multiple-choice record without choices", self.id))
                })?;
                if choices.len() < 2 {
                    return Err(Error::validation(format!(
                        "record {}: multiple-choice record needs at least 2 choices",
                        self.id
                    )));
                }
                let pos = choices.iter().position(|c| *c == self.ground_truth).ok_or_else(|| {
                    Error::validation(format!("record {}: ground truth is not one of the choices", self.id))
                })?;
                let expected = choice_letter(pos);
                match &self.choice_label {
                    None => self.choice_label = Some(expected),
                    Some(label) if label.eq_ignore_ascii_case(&expected) => {}
                    Some(label) => {
                        return Err(Error::validation(format!(
                            "record {}: choice label {label} does not match ground truth position {expected}",
                            self.id
                        )))
                    }
                }
                if self.context.is_some() {
                    return Err(Error::validation(format!(
                        "record {}: multiple-choice record with context",
                        self.id
                    )));
                }
            }
            Scenario::Abstractive => {
                if self.context.is_some() || self.choices.is_some() {
                    return Err(Error::validation(format!(
                        "record {}: abstractive record must carry neither context nor choices",
                        self.id
                    )));
                }
            }
        }
        Ok(self)
    }
}

/// The original query at index 0 followed by `n` rewrites.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSet {
    variants: Vec<String>,
}

impl PerturbationSet {
    pub fn variants(&self) -> &[String] {
        &self.variants
    }

    /// Number of rewrites (the set holds `n + 1` variants).
    pub fn n(&self) -> usize {
        self.variants.len() - 1
    }

    pub fn len(&self) -> usize {
        self.variants.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn original(&self) -> &str {
        &self.variants[0]
    }

    /// Rebuilds a set from stored variants, checking the invariants.
    pub fn from_variants(variants: Vec<String>) -> Result<Self> {
        if variants.is_empty() {
            return Err(Error::Cardinality { expected: 1, actual: 0 });
        }
        if variants.iter().any(|v| v.trim().is_empty()) {
            return Err(Error::validation("perturbation set contains an empty variant"));
        }
        Ok(PerturbationSet { variants })
    }
}

/// Prepends the original query text to `rewrites`.
pub fn make_perturbation_set(original: &QueryRecord, rewrites: Vec<String>, n: usize) -> Result<PerturbationSet> {
    if rewrites.len() != n {
        return Err(Error::Cardinality {
            expected: n,
            actual: rewrites.len(),
        });
    }
    if original.text.trim().is_empty() {
        return Err(Error::validation("original query text is empty"));
    }
    if let Some(i) = rewrites.iter().position(|r| r.trim().is_empty()) {
        return Err(Error::validation(format!("rewrite {} is empty", i + 1)));
    }
    let mut variants = Vec::with_capacity(n + 1);
    variants.push(original.text.clone());
    variants.extend(rewrites);
    Ok(PerturbationSet { variants })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentStatus {
    Ok,
    ApiError,
    ContentFiltered,
    ParseFailure,
}

/// One agent's answer to one variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentOutput {
    pub perturbation_index: usize,
    pub text: String,
    pub status: AgentStatus,
    pub raw_response_digest: String,
}

impl AgentOutput {
    pub fn ok(perturbation_index: usize, text: impl Into<String>, raw_response: &str) -> Self {
        AgentOutput {
            perturbation_index,
            text: text.into(),
            status: AgentStatus::Ok,
            raw_response_digest: digest(raw_response),
        }
    }

    pub fn failed(perturbation_index: usize, status: AgentStatus, raw_response: &str) -> Self {
        debug_assert!(status != AgentStatus::Ok);
        AgentOutput {
            perturbation_index,
            text: String::new(),
            status,
            raw_response_digest: digest(raw_response),
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == AgentStatus::Ok
    }
}

/// Hex SHA-256 of a raw response body.
pub fn digest(raw: &str) -> String {
    use sha2::{Digest, Sha256};
    hex::encode(Sha256::digest(raw.as_bytes()))
}

/// Relation between the original query's correctness and the majority's.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Consensus,
    Dissent,
    Corrective,
    Erroneous,
}

impl Outcome {
    pub const ALL: [Outcome; 4] = [
        Outcome::Consensus,
        Outcome::Dissent,
        Outcome::Corrective,
        Outcome::Erroneous,
    ];

    pub fn from_correctness(original_correct: bool, majority_correct: bool) -> Self {
        match (original_correct, majority_correct) {
            (true, true) => Outcome::Consensus,
            (true, false) => Outcome::Dissent,
            (false, true) => Outcome::Corrective,
            (false, false) => Outcome::Erroneous,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::Consensus => "consensus",
            Outcome::Dissent => "dissent",
            Outcome::Corrective => "corrective",
            Outcome::Erroneous => "erroneous",
        }
    }
}

/// Classifies a record from its indicator vector (1 = hallucinated). The
/// majority is a strict majority of all `n + 1` indicators; an exact tie
/// counts as majority incorrect.
pub fn classify_outcome(indicators: &[u8]) -> Result<Outcome> {
    let first = *indicators
        .first()
        .ok_or_else(|| Error::validation("cannot classify an empty indicator vector"))?;
    check_indicators(indicators)?;
    let correct = indicators.iter().filter(|&&i| i == 0).count();
    let majority_correct = 2 * correct > indicators.len();
    Ok(Outcome::from_correctness(first == 0, majority_correct))
}

pub(crate) fn check_indicators(indicators: &[u8]) -> Result<()> {
    if indicators.iter().any(|&i| i > 1) {
        return Err(Error::validation("indicators must be 0 or 1"));
    }
    Ok(())
}

/// One completed Monte Carlo round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "StoredRecord", into = "StoredRecord")]
pub struct SimulationRecord {
    pub query: QueryRecord,
    pub perturbations: PerturbationSet,
    pub outputs: Vec<AgentOutput>,
    pub indicators: Vec<u8>,
    pub p_h: HallucinationRate,
    pub binary_label: u8,
    pub class_label: usize,
    pub outcome: Outcome,
    pub failed_agents: usize,
    pub sequence: u64,
}

impl SimulationRecord {
    /// Derives the rate, labels and outcome from graded outputs.
    pub fn assemble(
        query: QueryRecord,
        perturbations: PerturbationSet,
        outputs: Vec<AgentOutput>,
        indicators: Vec<u8>,
        sequence: u64,
    ) -> Result<Self> {
        let expected = perturbations.len();
        if outputs.len() != expected {
            return Err(Error::Cardinality {
                expected,
                actual: outputs.len(),
            });
        }
        if indicators.len() != expected {
            return Err(Error::Cardinality {
                expected,
                actual: indicators.len(),
            });
        }
        if let Some((i, o)) = outputs.iter().enumerate().find(|(i, o)| o.perturbation_index != *i) {
            return Err(Error::validation(format!(
                "output {i} carries perturbation index {}",
                o.perturbation_index
            )));
        }
        for o in &outputs {
            if o.is_ok() == o.text.is_empty() {
                return Err(Error::validation(format!(
                    "record {}: output {} has status {:?} but text length {}",
                    query.id,
                    o.perturbation_index,
                    o.status,
                    o.text.len()
                )));
            }
        }
        let p_h = labeler::hallucination_rate(&indicators)?;
        let binary_label = labeler::binary_label(p_h)?;
        let class_label = labeler::expected_class(p_h, perturbations.n())?;
        let outcome = classify_outcome(&indicators)?;
        let failed_agents = outputs.iter().filter(|o| !o.is_ok()).count();
        Ok(SimulationRecord {
            query,
            perturbations,
            outputs,
            indicators,
            p_h,
            binary_label,
            class_label,
            outcome,
            failed_agents,
            sequence,
        })
    }

    /// Number of rewrites.
    pub fn n(&self) -> usize {
        self.perturbations.n()
    }

    pub fn raters(&self) -> usize {
        self.indicators.len()
    }

    fn check(&self) -> Result<()> {
        let again = SimulationRecord::assemble(
            self.query.clone(),
            self.perturbations.clone(),
            self.outputs.clone(),
            self.indicators.clone(),
            self.sequence,
        )?;
        if again.p_h.numerator() != self.p_h.numerator()
            || again.p_h.denominator() != self.p_h.denominator()
            || again.binary_label != self.binary_label
            || again.class_label != self.class_label
            || again.outcome != self.outcome
        {
            return Err(Error::validation(format!(
                "record {}: stored labels disagree with its indicators",
                self.query.id
            )));
        }
        Ok(())
    }
}

/// Flat JSONL wire form of a [`SimulationRecord`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StoredRecord {
    pub id: String,
    pub scenario: Scenario,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub choices: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub choice_label: Option<String>,
    pub ground_truth: String,
    pub variants: Vec<String>,
    pub outputs: Vec<AgentOutput>,
    pub indicators: Vec<u8>,
    pub p_h_num: u32,
    pub p_h_den: u32,
    pub binary_label: u8,
    pub class_label: usize,
    pub outcome: Outcome,
    #[serde(default)]
    pub failed_agents: usize,
    #[serde(default)]
    pub sequence: u64,
}

impl From<SimulationRecord> for StoredRecord {
    fn from(r: SimulationRecord) -> Self {
        StoredRecord {
            id: r.query.id,
            scenario: r.query.scenario,
            text: r.query.text,
            context: r.query.context,
            choices: r.query.choices,
            choice_label: r.query.choice_label,
            ground_truth: r.query.ground_truth,
            variants: r.perturbations.variants,
            outputs: r.outputs,
            indicators: r.indicators,
            p_h_num: r.p_h.numerator(),
            p_h_den: r.p_h.denominator(),
            binary_label: r.binary_label,
            class_label: r.class_label,
            outcome: r.outcome,
            failed_agents: r.failed_agents,
            sequence: r.sequence,
        }
    }
}

impl TryFrom<StoredRecord> for SimulationRecord {
    type Error = Error;

    fn try_from(s: StoredRecord) -> Result<Self> {
        let query = QueryRecord {
            id: s.id,
            scenario: s.scenario,
            text: s.text,
            context: s.context,
            choices: s.choices,
            ground_truth: s.ground_truth,
            choice_label: s.choice_label,
        };
        let record = SimulationRecord {
            query,
            perturbations: PerturbationSet::from_variants(s.variants)?,
            outputs: s.outputs,
            indicators: s.indicators,
            p_h: HallucinationRate::new(s.p_h_num, s.p_h_den)?,
            binary_label: s.binary_label,
            class_label: s.class_label,
            outcome: s.outcome,
            failed_agents: s.failed_agents,
            sequence: s.sequence,
        };
        record.check()?;
        Ok(record)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mona_lisa() -> QueryRecord {
        QueryRecord::abstractive("q1", "Where is the Mona Lisa housed?", "The Louvre")
    }

    #[test]
    fn perturbation_set_keeps_original_first() {
        let rewrites: Vec<String> = (1..=5).map(|i| format!("rewrite {i}")).collect();
        let set = make_perturbation_set(&mona_lisa(), rewrites, 5).unwrap();
        assert_eq!(set.len(), 6);
        assert_eq!(set.original(), "Where is the Mona Lisa housed?");
        assert_eq!(set.variants()[0], mona_lisa().text);
        assert_eq!(set.n(), 5);
    }

    #[test]
    fn identity_only_set() {
        let set = make_perturbation_set(&mona_lisa(), vec![], 0).unwrap();
        assert_eq!(set.variants(), &["Where is the Mona Lisa housed?".to_string()]);
    }

    #[test]
    fn wrong_rewrite_count_is_cardinality_error() {
        let rewrites: Vec<String> = (1..=4).map(|i| format!("rewrite {i}")).collect();
        let err = make_perturbation_set(&mona_lisa(), rewrites, 5).unwrap_err();
        assert!(matches!(err, Error::Cardinality { expected: 5, actual: 4 }));
    }

    #[test]
    fn empty_rewrite_is_validation_error() {
        let rewrites = vec!["a".to_string(), "  ".to_string()];
        let err = make_perturbation_set(&mona_lisa(), rewrites, 2).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    #[test]
    fn outcome_examples() {
        assert_eq!(classify_outcome(&[0, 0, 0, 0, 0, 0]).unwrap(), Outcome::Consensus);
        assert_eq!(classify_outcome(&[1, 0, 0, 0, 0, 0]).unwrap(), Outcome::Corrective);
        assert_eq!(classify_outcome(&[0, 1, 1, 1, 1, 1]).unwrap(), Outcome::Dissent);
        assert_eq!(classify_outcome(&[1, 1, 1, 1, 1, 1]).unwrap(), Outcome::Erroneous);
        assert!(classify_outcome(&[]).is_err());
    }

    #[test]
    fn tie_counts_as_majority_incorrect() {
        assert_eq!(classify_outcome(&[0, 0, 0, 1, 1, 1]).unwrap(), Outcome::Dissent);
        assert_eq!(classify_outcome(&[1, 0, 0, 0, 1, 1]).unwrap(), Outcome::Erroneous);
    }

    #[test]
    fn scenario_tags() {
        assert_eq!(Scenario::Extractive.tag(), "EXTRACTIVE");
        assert_eq!(Scenario::MultipleChoice.tag(), "MULTIPLE CHOICE");
        assert_eq!(Scenario::Abstractive.tag(), "ABSTRACTIVE");
    }

    #[test]
    fn query_validation() {
        assert!(mona_lisa().validated().is_ok());
        let mut blank = mona_lisa();
        blank.text = "   ".into();
        assert!(blank.validated().is_err());

        let mut ex = QueryRecord::extractive("e", "q", "ctx", "a");
        ex.context = None;
        assert!(ex.validated().is_err());

        let mc = QueryRecord::multiple_choice("m", "q", vec!["x".into(), "y".into()], "y");
        let mc = mc.validated().unwrap();
        assert_eq!(mc.choice_label.as_deref(), Some("B"));

        let bad = QueryRecord::multiple_choice("m", "q", vec!["x".into(), "y".into()], "z");
        assert!(bad.validated().is_err());
        let single = QueryRecord::multiple_choice("m", "q", vec!["x".into()], "x");
        assert!(single.validated().is_err());
    }

    #[test]
    fn choice_letters() {
        assert_eq!(choice_letter(0), "A");
        assert_eq!(choice_letter(3), "D");
        assert_eq!(choice_letter(25), "Z");
        assert_eq!(choice_letter(26), "AA");
    }

    #[test]
    fn stored_record_field_names() {
        let q = mona_lisa();
        let set = make_perturbation_set(&q, vec!["r1".into()], 1).unwrap();
        let outputs = vec![
            AgentOutput::ok(0, "The Louvre", "raw"),
            AgentOutput::ok(1, "Paris", "raw"),
        ];
        let rec = SimulationRecord::assemble(q, set, outputs, vec![0, 1], 0).unwrap();
        let value = serde_json::to_value(&rec).unwrap();
        for key in [
            "id",
            "scenario",
            "text",
            "ground_truth",
            "variants",
            "outputs",
            "indicators",
            "p_h_num",
            "p_h_den",
            "binary_label",
            "class_label",
            "outcome",
        ] {
            assert!(value.get(key).is_some(), "missing {key}");
        }
        assert_eq!(value["p_h_num"], 1);
        assert_eq!(value["p_h_den"], 2);
        assert_eq!(value["outcome"], "dissent");
    }

    #[test]
    fn tampered_labels_are_rejected() {
        let q = mona_lisa();
        let set = make_perturbation_set(&q, vec!["r1".into()], 1).unwrap();
        let outputs = vec![
            AgentOutput::ok(0, "The Louvre", "raw"),
            AgentOutput::ok(1, "Paris", "raw"),
        ];
        let rec = SimulationRecord::assemble(q, set, outputs, vec![0, 1], 0).unwrap();
        let mut value = serde_json::to_value(&rec).unwrap();
        value["class_label"] = 0.into();
        assert!(serde_json::from_value::<SimulationRecord>(value).is_err());
    }
}

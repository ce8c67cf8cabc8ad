//! Grading of agent outputs against ground truth.
//!
//! Correctness is a partial, case-insensitive string match: the shorter of
//! the two normalized strings is aligned against every substring of the
//! longer one and scored by edit distance. Multiple-choice answers are also
//! accepted when they lead with the correct choice letter.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::record::{choice_letter, AgentOutput, QueryRecord, Scenario};

pub const DEFAULT_THRESHOLD: u8 = 90;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatchConfig {
    pub partial_ratio_threshold: u8,
    /// Fold typographic quotes and dashes to ASCII before comparing.
    pub normalize_unicode: bool,
}

impl Default for MatchConfig {
    fn default() -> Self {
        MatchConfig {
            partial_ratio_threshold: DEFAULT_THRESHOLD,
            normalize_unicode: true,
        }
    }
}

impl MatchConfig {
    pub fn with_threshold(threshold: u8) -> Result<Self> {
        let cfg = MatchConfig {
            partial_ratio_threshold: threshold,
            ..MatchConfig::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.partial_ratio_threshold > 100 {
            return Err(Error::validation(format!(
                "match threshold {} outside [0, 100]",
                self.partial_ratio_threshold
            )));
        }
        Ok(())
    }
}

const EXTRA_PUNCT: &[char] = &[
    '\u{2018}', '\u{2019}', '\u{201C}', '\u{201D}', '\u{00AB}', '\u{00BB}', '\u{2026}', '\u{2013}', '\u{2014}',
    '\u{00BF}', '\u{00A1}',
];

fn is_strippable(c: char) -> bool {
    c.is_ascii_punctuation() || EXTRA_PUNCT.contains(&c)
}

/// Case-folds, collapses whitespace and strips punctuation surrounding each
/// token. Non-ASCII letters and symbols are preserved.
pub fn normalize(text: &str) -> String {
    let lower = text.to_lowercase();
    let mut out = String::with_capacity(lower.len());
    for token in lower.split_whitespace() {
        let token = token.trim_matches(is_strippable);
        if token.is_empty() {
            continue;
        }
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(token);
    }
    out
}

fn fold_typography(text: &str) -> String {
    text.chars()
        .map(|c| match c {
            '\u{2018}' | '\u{2019}' | '\u{201B}' | '\u{2032}' => '\'',
            '\u{201C}' | '\u{201D}' | '\u{201F}' | '\u{2033}' => '"',
            '\u{2010}' | '\u{2011}' | '\u{2012}' | '\u{2013}' | '\u{2014}' | '\u{2212}' => '-',
            '\u{00A0}' | '\u{2009}' | '\u{202F}' => ' ',
            c => c,
        })
        .collect()
}

/// Minimum edit distance between `needle` and any substring of `haystack`.
fn best_substring_distance(needle: &[char], haystack: &[char]) -> usize {
    // Row 0 is all zeros: the alignment may start anywhere in the haystack.
    let mut prev = vec![0usize; haystack.len() + 1];
    let mut cur = vec![0usize; haystack.len() + 1];
    for (i, &nc) in needle.iter().enumerate() {
        cur[0] = i + 1;
        for (j, &hc) in haystack.iter().enumerate() {
            let sub = prev[j] + usize::from(nc != hc);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    // ...and end anywhere.
    prev.into_iter().min().unwrap_or(needle.len())
}

/// Partial similarity on a 0..=100 scale: `100 * (1 - d / |needle|)`,
/// rounded, where the shorter string is the needle and `d` is its best
/// substring edit distance within the longer one.
pub fn partial_ratio(a: &str, b: &str) -> u8 {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let (needle, haystack) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    if needle.is_empty() {
        return if haystack.is_empty() { 100 } else { 0 };
    }
    let d = best_substring_distance(&needle, &haystack);
    let len = needle.len();
    if d >= len {
        return 0;
    }
    // round(100 * (len - d) / len), half-up, in integers
    ((200 * (len - d) + len) / (2 * len)) as u8
}

/// Choice letter an output opens with: `B)`, `b.`, `(C)`, or a bare `D`.
pub fn leading_choice_letter(output: &str, n_choices: usize) -> Option<String> {
    let trimmed = output.trim_start();
    let trimmed = trimmed.strip_prefix('(').unwrap_or(trimmed);
    let mut chars = trimmed.chars();
    let letter = chars.next()?.to_ascii_uppercase();
    if !letter.is_ascii_uppercase() {
        return None;
    }
    let rest = chars.as_str();
    let rest_trim = rest.trim_start();
    let delimited = rest_trim.starts_with(')') || rest_trim.starts_with('.') || rest_trim.starts_with(':');
    let bare = rest
        .trim_matches(|c: char| c.is_whitespace() || c.is_ascii_punctuation())
        .is_empty();
    if !(delimited || bare) {
        return None;
    }
    let idx = (letter as u8 - b'A') as usize;
    (idx < n_choices).then(|| choice_letter(idx))
}

/// Grades one output; returns the indicator (0 = correct, 1 = hallucinated).
pub fn match_answer(
    output: &str,
    truth: &str,
    scenario: Scenario,
    choices: Option<&[String]>,
    choice_label: Option<&str>,
    cfg: &MatchConfig,
) -> Result<u8> {
    if scenario == Scenario::MultipleChoice && (choices.is_none() || choice_label.is_none()) {
        return Err(Error::validation(
            "multiple-choice grading needs both the choices and the choice label",
        ));
    }
    let (out_n, truth_n) = if cfg.normalize_unicode {
        (normalize(&fold_typography(output)), normalize(&fold_typography(truth)))
    } else {
        (normalize(output), normalize(truth))
    };
    if !out_n.is_empty() && partial_ratio(&truth_n, &out_n) >= cfg.partial_ratio_threshold {
        return Ok(0);
    }
    if let (Some(choices), Some(label)) = (choices, choice_label) {
        if scenario == Scenario::MultipleChoice {
            if let Some(letter) = leading_choice_letter(output, choices.len()) {
                if letter.eq_ignore_ascii_case(label) {
                    return Ok(0);
                }
            }
        }
    }
    Ok(1)
}

/// Pluggable grading interface. The default implementation is string based;
/// semantic-similarity graders can be supplied by callers.
pub trait AnswerMatcher: Send + Sync {
    fn indicator(&self, output: &AgentOutput, query: &QueryRecord) -> Result<u8>;
}

#[derive(Debug, Clone, Default)]
pub struct StringMatcher {
    pub config: MatchConfig,
}

impl StringMatcher {
    pub fn new(config: MatchConfig) -> Self {
        StringMatcher { config }
    }
}

impl AnswerMatcher for StringMatcher {
    fn indicator(&self, output: &AgentOutput, query: &QueryRecord) -> Result<u8> {
        // failed agents count as hallucinations; the status stays on the record
        if !output.is_ok() {
            return Ok(1);
        }
        match_answer(
            &output.text,
            &query.ground_truth,
            query.scenario,
            query.choices.as_deref(),
            query.choice_label.as_deref(),
            &self.config,
        )
    }
}

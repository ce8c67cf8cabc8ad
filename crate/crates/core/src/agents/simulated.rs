//! Seeded stand-in for the remote LLM.
//!
//! Each agent draws from its own ChaCha stream keyed by
//! `(rng_seed, query id)` with the perturbation index as stream number, so
//! outputs are bit-reproducible and independent across agents regardless of
//! scheduling order.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Backend, Completion, Failure, Prompt, Response};
use crate::error::{Error, Result};
use crate::matcher::{match_answer, MatchConfig};
use crate::record::{choice_letter, AgentOutput, AgentStatus, QueryRecord, Scenario};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SimulatedAgentProfile {
    #[serde(default)]
    pub per_query_correct_prob: BTreeMap<String, f64>,
    #[serde(default)]
    pub answer_pool: BTreeMap<String, Vec<String>>,
    #[serde(default)]
    pub rng_seed: u64,
}

impl SimulatedAgentProfile {
    pub fn new(rng_seed: u64) -> Self {
        SimulatedAgentProfile {
            rng_seed,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (id, &p) in &self.per_query_correct_prob {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::validation(format!(
                    "query {id}: correct probability {p} outside [0, 1]"
                )));
            }
            if p < 1.0 && self.answer_pool.get(id).is_some_and(Vec::is_empty) {
                return Err(Error::validation(format!("query {id}: empty wrong-answer pool")));
            }
        }
        Ok(())
    }
}

const DISTRACTORS: [&str; 8] = [
    "I am not sure",
    "It cannot be determined",
    "None of the above",
    "Zanzibar",
    "Seventeen",
    "The Pythagorean theorem",
    "Quokka",
    "Vermilion",
];

/// Wrong answers for a query when the profile supplies none: the other
/// choices for multiple-choice records, otherwise fixed distractors that do
/// not grade as correct against the ground truth.
pub fn default_distractors(query: &QueryRecord, cfg: &MatchConfig) -> Vec<String> {
    let grades_wrong = |a: &str| {
        match_answer(
            a,
            &query.ground_truth,
            query.scenario,
            query.choices.as_deref(),
            query.choice_label.as_deref(),
            cfg,
        )
        .map_or(true, |i| i == 1)
    };
    let pool: Vec<String> = match (query.scenario, &query.choices) {
        (Scenario::MultipleChoice, Some(choices)) => choices
            .iter()
            .enumerate()
            .filter(|(_, c)| **c != query.ground_truth)
            .map(|(i, c)| format!("{}) {c}", choice_letter(i)))
            .collect(),
        _ => DISTRACTORS.iter().map(|s| s.to_string()).collect(),
    };
    pool.into_iter().filter(|a| grades_wrong(a)).collect()
}

fn stream_rng(seed: u64, query_id: &str, stream_index: u64) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update((query_id.len() as u64).to_le_bytes());
    h.update(query_id.as_bytes());
    let key: [u8; 32] = h.finalize().into();
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(stream_index);
    rng
}

fn draw(prob: f64, truth: &str, pool: &[String], rng: &mut ChaCha8Rng) -> Result<String> {
    let u: f64 = rng.random();
    if u < prob {
        return Ok(truth.to_string());
    }
    if pool.is_empty() {
        return Err(Error::validation("no wrong answer available"));
    }
    Ok(pool[rng.random_range(0..pool.len())].clone())
}

/// One simulated agent answer, a pure function of `(profile.rng_seed,
/// query.id, stream_index)`.
pub fn simulated_agent(
    query: &QueryRecord,
    profile: &SimulatedAgentProfile,
    stream_index: usize,
) -> Result<AgentOutput> {
    let prob = *profile
        .per_query_correct_prob
        .get(&query.id)
        .ok_or_else(|| Error::validation(format!("simulated profile does not cover query {}", query.id)))?;
    let default_pool;
    let pool = match profile.answer_pool.get(&query.id) {
        Some(p) => p.as_slice(),
        None => {
            default_pool = default_distractors(query, &MatchConfig::default());
            default_pool.as_slice()
        }
    };
    let mut rng = stream_rng(profile.rng_seed, &query.id, stream_index as u64);
    let text = draw(prob, &query.ground_truth, pool, &mut rng)?;
    Ok(AgentOutput::ok(stream_index, text.clone(), &text))
}

const REWRITE_TEMPLATES: [&str; 5] = [
    "Put differently: {q}",
    "In other words, {q}",
    "Could you tell me this: {q}",
    "Here is my question. {q}",
    "Consider the following. {q}",
];

/// Simulated backend. Queries absent from the profile fall back to
/// `default_prob` when one is set.
#[derive(Debug, Clone)]
pub struct SimulatedBackend {
    profile: SimulatedAgentProfile,
    default_prob: Option<f64>,
    match_config: MatchConfig,
}

impl SimulatedBackend {
    pub fn new(profile: SimulatedAgentProfile, default_prob: Option<f64>) -> Result<Self> {
        profile.validate()?;
        if let Some(p) = default_prob {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::validation(format!(
                    "default correct probability {p} outside [0, 1]"
                )));
            }
        }
        Ok(SimulatedBackend {
            profile,
            default_prob,
            match_config: MatchConfig::default(),
        })
    }

    pub fn with_match_config(mut self, cfg: MatchConfig) -> Self {
        self.match_config = cfg;
        self
    }

    pub fn profile(&self) -> &SimulatedAgentProfile {
        &self.profile
    }

    fn correct_prob(&self, id: &str) -> Option<f64> {
        self.profile
            .per_query_correct_prob
            .get(id)
            .copied()
            .or(self.default_prob)
    }

    fn failure(message: String) -> Failure {
        Failure {
            status: AgentStatus::ApiError,
            raw: String::new(),
            message,
        }
    }
}

impl Backend for SimulatedBackend {
    fn perturb(&self, query: &QueryRecord, _prompt: &Prompt, n: usize, _attempt: u32) -> Completion {
        let raw: String = (0..n)
            .map(|i| {
                let t = REWRITE_TEMPLATES[i % REWRITE_TEMPLATES.len()].replace("{q}", &query.text);
                if i < REWRITE_TEMPLATES.len() {
                    format!("{}. {t}\n", i + 1)
                } else {
                    format!("{}. {t} (take {})\n", i + 1, i / REWRITE_TEMPLATES.len() + 1)
                }
            })
            .collect();
        Ok(Response {
            text: raw.clone(),
            raw,
            usage: None,
        })
    }

    fn answer(&self, query: &QueryRecord, index: usize, _prompt: &Prompt) -> Completion {
        let prob = self
            .correct_prob(&query.id)
            .ok_or_else(|| Self::failure(format!("simulated profile does not cover query {}", query.id)))?;
        let default_pool;
        let pool = match self.profile.answer_pool.get(&query.id) {
            Some(p) => p.as_slice(),
            None => {
                default_pool = default_distractors(query, &self.match_config);
                default_pool.as_slice()
            }
        };
        let mut rng = stream_rng(self.profile.rng_seed, &query.id, index as u64);
        let text = draw(prob, &query.ground_truth, pool, &mut rng).map_err(|e| Self::failure(e.to_string()))?;
        Ok(Response {
            raw: text.clone(),
            text,
            usage: None,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn profile(p: f64) -> (QueryRecord, SimulatedAgentProfile) {
        let q = QueryRecord::abstractive("q1", "Where is the Mona Lisa housed?", "The Louvre");
        let mut prof = SimulatedAgentProfile::new(42);
        prof.per_query_correct_prob.insert("q1".into(), p);
        (q, prof)
    }

    #[test]
    fn certain_agents() {
        let (q, prof) = profile(1.0);
        for i in 0..50 {
            assert_eq!(simulated_agent(&q, &prof, i).unwrap().text, "The Louvre");
        }
        let (q, prof) = profile(0.0);
        let pool = default_distractors(&q, &MatchConfig::default());
        for i in 0..50 {
            let out = simulated_agent(&q, &prof, i).unwrap();
            assert!(pool.contains(&out.text));
        }
    }

    #[test]
    fn empirical_rate_within_binomial_bound() {
        let (q, prof) = profile(0.3);
        let hits = (0..10_000)
            .filter(|&i| simulated_agent(&q, &prof, i).unwrap().text == "The Louvre")
            .count();
        let frac = hits as f64 / 10_000.0;
        assert!((frac - 0.3).abs() <= 0.015, "fraction {frac}");
    }

    #[test]
    fn reproducible_and_keyed() {
        let (q, prof) = profile(0.5);
        let a: Vec<String> = (0..20).map(|i| simulated_agent(&q, &prof, i).unwrap().text).collect();
        let b: Vec<String> = (0..20).map(|i| simulated_agent(&q, &prof, i).unwrap().text).collect();
        assert_eq!(a, b);
        let mut other = prof.clone();
        other.rng_seed = 43;
        let c: Vec<String> = (0..20).map(|i| simulated_agent(&q, &other, i).unwrap().text).collect();
        assert_ne!(a, c);
    }

    #[test]
    fn unknown_query_is_rejected() {
        let (_, prof) = profile(0.5);
        let q = QueryRecord::abstractive("other", "?", "x");
        assert!(simulated_agent(&q, &prof, 0).is_err());
    }

    #[test]
    fn distractors_never_grade_correct() {
        let q = QueryRecord::abstractive("q", "How many?", "Seventeen");
        let pool = default_distractors(&q, &MatchConfig::default());
        assert!(!pool.iter().any(|a| a == "Seventeen"));
        assert!(!pool.is_empty());
        let mc = QueryRecord::multiple_choice("m", "?", vec!["a1".into(), "b2".into(), "c3".into()], "b2")
            .validated()
            .unwrap();
        assert_eq!(default_distractors(&mc, &MatchConfig::default()), ["A) a1", "C) c3"]);
    }

    #[test]
    fn profile_validation() {
        let (_, mut prof) = profile(1.5);
        assert!(prof.validate().is_err());
        prof.per_query_correct_prob.insert("q1".into(), 0.5);
        prof.answer_pool.insert("q1".into(), vec![]);
        assert!(prof.validate().is_err());
    }
}

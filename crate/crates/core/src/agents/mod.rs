//! Prompt construction and LLM backends.
//!
//! Two backends implement [`Backend`]: [`RemoteClient`] talks to a
//! chat-completions endpoint, [`SimulatedBackend`] is a seeded stand-in whose
//! answers are a pure function of `(seed, query id, stream index)`.

mod parse;
mod prompts;
mod remote;
mod simulated;

use serde::{Deserialize, Serialize};

pub use parse::parse_perturbations;
pub use prompts::{encode_with_scenario, render_output_prompt, render_perturbation_prompt, Prompt, SYSTEM_LINE};
pub use remote::{build_request_body, classify_response, RemoteClient, RetryPolicy, API_KEY_ENV, ENDPOINT_ENV};
pub use simulated::{default_distractors, simulated_agent, SimulatedAgentProfile, SimulatedBackend};

use crate::error::{Error, Result};
use crate::record::{AgentStatus, QueryRecord};

/// Sampling parameters transmitted with every request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationParams {
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
    pub frequency_penalty: f64,
    pub presence_penalty: f64,
    pub seed: i64,
    pub model: String,
}

impl Default for GenerationParams {
    fn default() -> Self {
        GenerationParams {
            temperature: 1.0,
            top_p: 0.95,
            max_tokens: 800,
            frequency_penalty: 0.0,
            presence_penalty: 0.0,
            seed: 123,
            model: "gpt-35-turbo-16k".to_string(),
        }
    }
}

impl GenerationParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return Err(Error::validation(format!(
                "temperature {} must be >= 0",
                self.temperature
            )));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(Error::validation(format!("top_p {} must be in (0, 1]", self.top_p)));
        }
        if self.max_tokens < 1 {
            return Err(Error::validation("max_tokens must be >= 1"));
        }
        Ok(())
    }
}

/// Token usage echoed by an endpoint.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    #[serde(default)]
    pub prompt_tokens: u64,
    #[serde(default)]
    pub completion_tokens: u64,
    #[serde(default)]
    pub total_tokens: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Response {
    pub text: String,
    /// Verbatim response body.
    pub raw: String,
    pub usage: Option<Usage>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Failure {
    pub status: AgentStatus,
    pub raw: String,
    pub message: String,
}

pub type Completion = std::result::Result<Response, Failure>;

/// An LLM backend shared by all concurrent pipelines.
pub trait Backend: Send + Sync {
    /// Asks for `n` rewrites of `query`. `attempt` counts re-asks from 0.
    fn perturb(&self, query: &QueryRecord, prompt: &Prompt, n: usize, attempt: u32) -> Completion;

    /// Answers variant `index` of `query`.
    fn answer(&self, query: &QueryRecord, index: usize, prompt: &Prompt) -> Completion;
}

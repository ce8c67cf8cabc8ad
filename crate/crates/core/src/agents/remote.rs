//! Blocking chat-completions client.

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use rand::Rng;
use serde_json::{json, Value};

use super::{Backend, Completion, Failure, GenerationParams, Prompt, Response, Usage};
use crate::error::{Error, Result};
use crate::record::{AgentStatus, QueryRecord};

pub const API_KEY_ENV: &str = "HALLUCIMC_API_KEY";
pub const ENDPOINT_ENV: &str = "HALLUCIMC_ENDPOINT";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
    /// Each delay is scaled by a uniform factor in `[1 - jitter, 1]`.
    pub jitter: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 5,
            base_delay: Duration::from_secs(1),
            max_delay: Duration::from_secs(60),
            jitter: 0.5,
        }
    }
}

impl RetryPolicy {
    /// Delay before retry number `attempt` (0-based).
    pub fn delay(&self, attempt: u32) -> Duration {
        let exp = self.base_delay.saturating_mul(1u32 << attempt.min(20));
        let capped = exp.min(self.max_delay);
        let factor = if self.jitter > 0.0 {
            rand::rng().random_range((1.0 - self.jitter).max(0.0)..=1.0)
        } else {
            1.0
        };
        capped.mul_f64(factor)
    }
}

/// Counting semaphore bounding in-flight requests.
#[derive(Debug)]
struct InFlight {
    slots: Mutex<usize>,
    freed: Condvar,
}

impl InFlight {
    fn new(cap: usize) -> Self {
        InFlight {
            slots: Mutex::new(cap.max(1)),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut slots = self.slots.lock().unwrap_or_else(|e| e.into_inner());
        while *slots == 0 {
            slots = self.freed.wait(slots).unwrap_or_else(|e| e.into_inner());
        }
        *slots -= 1;
        Permit(self)
    }
}

struct Permit<'a>(&'a InFlight);

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.slots.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.freed.notify_one();
    }
}

/// JSON body for one chat-completions request.
pub fn build_request_body(params: &GenerationParams, prompt: &Prompt) -> Value {
    let mut messages = Vec::new();
    if let Some(system) = &prompt.system {
        messages.push(json!({"role": "system", "content": system}));
    }
    messages.push(json!({"role": "user", "content": prompt.user}));
    json!({
        "model": params.model,
        "messages": messages,
        "temperature": params.temperature,
        "top_p": params.top_p,
        "max_tokens": params.max_tokens,
        "frequency_penalty": params.frequency_penalty,
        "presence_penalty": params.presence_penalty,
        "seed": params.seed,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum Classified {
    Ok { text: String, usage: Option<Usage> },
    Retry(String),
    Fail(AgentStatus, String),
}

fn is_content_filter(body: &Value) -> bool {
    let err = &body["error"];
    let code = |v: &Value| v.as_str().is_some_and(|s| s.contains("content_filter"));
    code(&err["code"]) || code(&err["innererror"]["code"]) || code(&err["type"])
}

/// Maps an HTTP status and body to a completion outcome.
pub fn classify_response(status: u16, body: &str) -> Classified {
    let parsed: Option<Value> = serde_json::from_str(body).ok();
    match status {
        200..=299 => {
            let Some(v) = parsed else {
                return Classified::Fail(AgentStatus::ParseFailure, "response is not JSON".into());
            };
            let choice = &v["choices"][0];
            if choice["finish_reason"].as_str() == Some("content_filter") {
                return Classified::Fail(AgentStatus::ContentFiltered, "completion was filtered".into());
            }
            let usage = serde_json::from_value(v["usage"].clone()).ok();
            match choice["message"]["content"].as_str() {
                Some(text) if !text.trim().is_empty() => Classified::Ok {
                    text: text.trim().to_string(),
                    usage,
                },
                _ => Classified::Fail(AgentStatus::ParseFailure, "completion has no message content".into()),
            }
        }
        400 if parsed.as_ref().is_some_and(is_content_filter) => {
            Classified::Fail(AgentStatus::ContentFiltered, "prompt was filtered".into())
        }
        408 | 409 | 429 | 500..=599 => Classified::Retry(format!("HTTP {status}")),
        _ => Classified::Fail(AgentStatus::ApiError, format!("HTTP {status}")),
    }
}

pub struct RemoteClient {
    url: String,
    api_key: Option<String>,
    params: GenerationParams,
    retry: RetryPolicy,
    agent: ureq::Agent,
    in_flight: InFlight,
}

impl RemoteClient {
    pub fn new(
        base_url: &str,
        api_key: Option<String>,
        params: GenerationParams,
        max_in_flight: usize,
    ) -> Result<Self> {
        params.validate()?;
        if base_url.trim().is_empty() {
            return Err(Error::Config("no endpoint configured".into()));
        }
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(300)))
            .build()
            .into();
        Ok(RemoteClient {
            url: format!("{}/chat/completions", base_url.trim_end_matches('/')),
            api_key,
            params,
            retry: RetryPolicy::default(),
            agent,
            in_flight: InFlight::new(max_in_flight),
        })
    }

    /// Reads the endpoint (unless given) and API key from the environment.
    pub fn from_env(endpoint: Option<&str>, params: GenerationParams, max_in_flight: usize) -> Result<Self> {
        let endpoint = match endpoint {
            Some(e) => e.to_string(),
            None => {
                std::env::var(ENDPOINT_ENV).map_err(|_| Error::Config(format!("set --endpoint or {ENDPOINT_ENV}")))?
            }
        };
        let key = std::env::var(API_KEY_ENV).ok();
        if key.is_none() {
            log::warn!("{API_KEY_ENV} is not set; sending requests without credentials");
        }
        RemoteClient::new(&endpoint, key, params, max_in_flight)
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn url(&self) -> &str {
        &self.url
    }

    fn send_once(&self, body: &Value) -> std::result::Result<(u16, String), String> {
        let _permit = self.in_flight.acquire();
        let mut req = self.agent.post(&self.url).header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req.send(body.to_string()).map_err(|e| e.to_string())?;
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string().map_err(|e| e.to_string())?;
        Ok((status, text))
    }

    /// Sends one prompt, retrying transient failures with jittered
    /// exponential backoff.
    pub fn chat_complete(&self, prompt: &Prompt) -> Completion {
        let body = build_request_body(&self.params, prompt);
        let mut last = String::new();
        let mut last_raw = String::new();
        for attempt in 0..self.retry.max_attempts.max(1) {
            if attempt > 0 {
                std::thread::sleep(self.retry.delay(attempt - 1));
            }
            match self.send_once(&body) {
                Ok((status, raw)) => match classify_response(status, &raw) {
                    Classified::Ok { text, usage } => return Ok(Response { text, raw, usage }),
                    Classified::Fail(status, message) => return Err(Failure { status, raw, message }),
                    Classified::Retry(msg) => {
                        log::debug!("attempt {} failed: {msg}", attempt + 1);
                        last = msg;
                        last_raw = raw;
                    }
                },
                Err(msg) => {
                    log::debug!("attempt {} failed: {msg}", attempt + 1);
                    last = msg;
                }
            }
        }
        Err(Failure {
            status: AgentStatus::ApiError,
            raw: last_raw,
            message: format!("giving up after {} attempts: {last}", self.retry.max_attempts),
        })
    }
}

impl Backend for RemoteClient {
    fn perturb(&self, _query: &QueryRecord, prompt: &Prompt, _n: usize, _attempt: u32) -> Completion {
        self.chat_complete(prompt)
    }

    fn answer(&self, _query: &QueryRecord, _index: usize, prompt: &Prompt) -> Completion {
        self.chat_complete(prompt)
    }
}

//! Language-model access: raw generation, format-gated generation with retry,
//! and the format-compliance benchmark.

mod http;
mod mock;

pub use http::{HttpLlm, API_KEY_ENV};
pub use mock::{Malformation, MalformationPolicy, MockLlm, MockResponse};

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::persona::{PersonaError, PersonaRegistry};
use crate::prompt::{build_prompt, PromptError, PromptText};
use crate::script::{self, ConversationScript, FormatIssue, ScriptError};
use crate::seed::{hash64, rng_from_seed};

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("backend returned status {status}: {body}")]
    Backend { status: u16, body: String },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error(transparent)]
    Persona(#[from] PersonaError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

/// Identifies one generation request. Backends that support seeded sampling
/// derive their randomness from `seed`; others ignore the tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RequestTag {
    pub conversation: u64,
    pub attempt: u32,
    pub seed: u64,
}

pub trait LlmBackend: Send + Sync {
    fn complete(&self, prompt: &str, tag: &RequestTag) -> Result<String, LlmError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LlmBackendConfig {
    pub endpoint: String,
    pub model: String,
    pub timeout_s: f64,
    pub max_retries: u32,
    pub temperature: f64,
}

impl Default for LlmBackendConfig {
    fn default() -> Self {
        Self {
            endpoint: "http://localhost:11434".into(),
            model: "llama3:8b".into(),
            timeout_s: 300.0,
            max_retries: 0,
            temperature: 0.8,
        }
    }
}

impl LlmBackendConfig {
    pub fn validate(&self) -> Result<(), LlmError> {
        if !(self.timeout_s.is_finite() && self.timeout_s > 0.0) {
            return Err(LlmError::InvalidRequest(format!(
                "timeout must be positive, got {}",
                self.timeout_s
            )));
        }
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return Err(LlmError::InvalidRequest(format!(
                "temperature must be >= 0, got {}",
                self.temperature
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawResponse {
    pub text: String,
    pub latency_s: f64,
}

pub fn generate_raw(
    prompt: &PromptText,
    backend: &dyn LlmBackend,
    tag: &RequestTag,
) -> Result<RawResponse, LlmError> {
    let started = Instant::now();
    let text = backend.complete(&prompt.text, tag)?;
    Ok(RawResponse {
        text,
        latency_s: started.elapsed().as_secs_f64(),
    })
}

/// One request within `generate_validated`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attempt {
    pub attempt: u32,
    pub latency_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub issues: Vec<FormatIssue>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transport_error: Option<String>,
}

/// Every attempt failed; the conversation is dropped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub attempts: Vec<Attempt>,
}

impl FailureRecord {
    pub fn reasons(&self) -> Vec<String> {
        self.attempts
            .iter()
            .map(|a| match (&a.transport_error, a.issues.first()) {
                (Some(e), _) => format!("attempt {}: {e}", a.attempt),
                (None, Some(issue)) => format!("attempt {}: {issue}", a.attempt),
                (None, None) => format!("attempt {}: unknown failure", a.attempt),
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub enum Generation {
    Valid {
        script: ConversationScript,
        attempts: Vec<Attempt>,
    },
    Failed(FailureRecord),
}

impl Generation {
    pub fn attempts(&self) -> &[Attempt] {
        match self {
            Self::Valid { attempts, .. } => attempts,
            Self::Failed(f) => &f.attempts,
        }
    }

    pub fn latency_s(&self) -> f64 {
        self.attempts().iter().map(|a| a.latency_s).sum()
    }
}

/// Seed for attempt `attempt` of a conversation whose seed is `conversation_seed`.
pub fn attempt_seed(conversation_seed: u64, attempt: u32) -> u64 {
    hash64(conversation_seed, 0x4C4C_4D00 + attempt as u64)
}

/// Request up to `max_retries + 1` completions with the identical prompt and
/// return the first one that passes format validation.
pub fn generate_validated(
    prompt: &PromptText,
    id: &str,
    backend: &dyn LlmBackend,
    max_retries: u32,
    conversation: u64,
    conversation_seed: u64,
) -> Result<Generation, LlmError> {
    let mut attempts = Vec::new();
    let mut last_transport = None;
    for attempt in 0..=max_retries {
        let tag = RequestTag {
            conversation,
            attempt,
            seed: attempt_seed(conversation_seed, attempt),
        };
        let started = Instant::now();
        match backend.complete(&prompt.text, &tag) {
            Ok(text) => {
                let latency_s = started.elapsed().as_secs_f64();
                match script::parse(&text, &prompt.roster, id) {
                    Ok(script) => {
                        attempts.push(Attempt {
                            attempt,
                            latency_s,
                            raw: Some(text),
                            issues: Vec::new(),
                            transport_error: None,
                        });
                        return Ok(Generation::Valid { script, attempts });
                    }
                    Err(err) => {
                        let issues = match err {
                            ScriptError::Format(v) => v.errors,
                            // parse only builds scripts from validated lines
                            other => unreachable!("validated text failed to build: {other}"),
                        };
                        attempts.push(Attempt {
                            attempt,
                            latency_s,
                            raw: Some(text),
                            issues,
                            transport_error: None,
                        });
                    }
                }
            }
            Err(err @ (LlmError::Transport(_) | LlmError::Backend { .. })) => {
                attempts.push(Attempt {
                    attempt,
                    latency_s: started.elapsed().as_secs_f64(),
                    raw: None,
                    issues: Vec::new(),
                    transport_error: Some(err.to_string()),
                });
                last_transport = Some(err);
            }
            Err(other) => return Err(other),
        }
    }
    if attempts.iter().all(|a| a.transport_error.is_some()) {
        if let Some(err) = last_transport {
            return Err(err);
        }
    }
    Ok(Generation::Failed(FailureRecord { attempts }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchResponse {
    pub roster: Vec<String>,
    pub text: String,
    pub latency_s: f64,
    pub valid: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub n_requests: usize,
    pub total_time_s: f64,
    pub per_request_times_s: Vec<f64>,
    pub wrong_format_count: usize,
    pub responses: Vec<BenchResponse>,
}

impl BenchmarkReport {
    pub fn to_table(&self) -> String {
        let mean = if self.n_requests == 0 {
            0.0
        } else {
            self.total_time_s / self.n_requests as f64
        };
        format!(
            "requests            {}\n\
             total time (s)      {:.2}\n\
             mean per request    {:.2}\n\
             wrong format        {}\n",
            self.n_requests, self.total_time_s, mean, self.wrong_format_count
        )
    }
}

/// Single-attempt generations over `n` freshly sampled rosters, run
/// sequentially so that the total time is meaningful.
pub fn benchmark(
    backend: &dyn LlmBackend,
    registry: &PersonaRegistry,
    n: usize,
    seed: u64,
) -> Result<BenchmarkReport, LlmError> {
    if n == 0 {
        return Err(LlmError::InvalidRequest(
            "benchmark needs at least one request".into(),
        ));
    }
    let mut responses = Vec::with_capacity(n);
    for i in 0..n as u64 {
        let request_seed = hash64(seed, i);
        let roster = registry.sample_participants(&mut rng_from_seed(request_seed))?;
        let prompt = build_prompt(&roster)?;
        let tag = RequestTag {
            conversation: i,
            attempt: 0,
            seed: attempt_seed(request_seed, 0),
        };
        let raw = generate_raw(&prompt, backend, &tag)?;
        let valid = script::validate_format(&raw.text, &prompt.roster).is_valid();
        responses.push(BenchResponse {
            roster: prompt.roster,
            text: raw.text,
            latency_s: raw.latency_s,
            valid,
        });
    }
    let per_request_times_s: Vec<f64> = responses.iter().map(|r| r.latency_s).collect();
    Ok(BenchmarkReport {
        n_requests: n,
        total_time_s: per_request_times_s.iter().sum(),
        wrong_format_count: responses.iter().filter(|r| !r.valid).count(),
        per_request_times_s,
        responses,
    })
}

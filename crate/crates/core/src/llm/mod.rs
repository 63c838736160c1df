//! Provider-agnostic completion gateway.
//!
//! Every prompt in the system goes through [`Gateway::complete`], which
//! enforces the per-run token budget, retries transient provider faults with
//! exponential backoff, and keeps a log of every call. Providers implement
//! [`CompletionProvider`]; [`ScriptedProvider`] replays recorded sessions for
//! offline runs and [`HttpChatProvider`] speaks chat-completion endpoints.

mod http;
mod scripted;

use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use http::{HttpChatConfig, HttpChatProvider};
pub use scripted::{ScriptEntry, ScriptedProvider, ScriptedSession};

/// Default sampling temperature for generation prompts.
pub const GENERATION_TEMPERATURE: f32 = 0.7;
/// Default sampling temperature for reviewer scoring prompts.
pub const SCORING_TEMPERATURE: f32 = 0.0;
pub const DEFAULT_MAX_RETRIES: u32 = 3;
pub const DEFAULT_INITIAL_BACKOFF: Duration = Duration::from_secs(1);
pub const DEFAULT_TOKEN_BUDGET: u64 = 200_000;
pub const DEFAULT_MAX_OUTPUT_TOKENS: u32 = 4096;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub prompt: String,
    pub max_output_tokens: u32,
    pub temperature: f32,
    pub session_tag: String,
}

impl CompletionRequest {
    pub fn new(prompt: impl Into<String>) -> Self {
        Self {
            prompt: prompt.into(),
            max_output_tokens: DEFAULT_MAX_OUTPUT_TOKENS,
            temperature: GENERATION_TEMPERATURE,
            session_tag: String::new(),
        }
    }

    pub fn with_temperature(mut self, temperature: f32) -> Self {
        self.temperature = temperature;
        self
    }

    pub fn with_tag(mut self, tag: impl Into<String>) -> Self {
        self.session_tag = tag.into();
        self
    }

    fn validate(&self) -> Result<(), GatewayError> {
        if self.prompt.is_empty() {
            return Err(GatewayError::InvalidRequest("prompt is empty".into()));
        }
        if self.max_output_tokens == 0 {
            return Err(GatewayError::InvalidRequest("max_output_tokens must be positive".into()));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(GatewayError::InvalidRequest(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub input_tokens: u64,
    pub output_tokens: u64,
}

/// What a provider hands back for one attempt.
#[derive(Debug, Clone, PartialEq)]
pub struct ProviderReply {
    pub text: String,
    pub usage: Usage,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionResponse {
    pub text: String,
    pub provider_id: String,
    pub usage: Usage,
    pub latency: Duration,
    /// Number of failed attempts before the successful one.
    pub retries: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProviderError {
    #[error("transient provider error: {0}")]
    Transient(String),
    #[error("provider error: {0}")]
    Permanent(String),
    #[error("scripted session mismatch at entry {index}: prompt does not contain {expected:?}")]
    SessionMismatch { index: usize, expected: String },
    #[error("scripted session exhausted after {len} entries")]
    SessionExhausted { len: usize },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GatewayError {
    #[error("invalid completion request: {0}")]
    InvalidRequest(String),
    #[error("token budget exhausted: projected {projected} tokens, {remaining} remaining")]
    BudgetExhausted { projected: u64, remaining: u64 },
    #[error("provider unavailable after {attempts} attempts: {last}")]
    ProviderUnavailable { attempts: u32, last: String },
    #[error(transparent)]
    Provider(ProviderError),
}

pub trait CompletionProvider: Send + Sync {
    fn id(&self) -> &str;
    fn complete(&self, request: &CompletionRequest) -> Result<ProviderReply, ProviderError>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub initial_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: DEFAULT_MAX_RETRIES,
            initial_backoff: DEFAULT_INITIAL_BACKOFF,
        }
    }
}

impl RetryPolicy {
    /// Retry policy without sleeping between attempts.
    pub fn immediate(max_retries: u32) -> Self {
        Self {
            max_retries,
            initial_backoff: Duration::ZERO,
        }
    }
}

/// One entry in the gateway call log.
#[derive(Debug, Clone, PartialEq)]
pub struct CallRecord {
    pub session_tag: String,
    pub prompt_chars: usize,
    pub usage: Usage,
    pub retries: u32,
    pub outcome: Result<(), String>,
}

#[derive(Debug)]
struct Ledger {
    remaining: u64,
    total: Usage,
    calls: Vec<CallRecord>,
}

/// Budgeted, retrying front door to a completion provider.
///
/// The budget counts output tokens. Before dispatch the request is projected
/// at one token per three prompt characters; a request whose projection
/// exceeds the remaining budget is refused without contacting the provider.
pub struct Gateway {
    provider: Arc<dyn CompletionProvider>,
    retry: RetryPolicy,
    ledger: Mutex<Ledger>,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway")
            .field("provider", &self.provider.id())
            .field("retry", &self.retry)
            .finish_non_exhaustive()
    }
}

pub fn project_tokens(prompt: &str) -> u64 {
    (prompt.chars().count() as u64).div_ceil(3)
}

impl Gateway {
    pub fn new(provider: Arc<dyn CompletionProvider>) -> Self {
        Self::with_limits(provider, RetryPolicy::default(), DEFAULT_TOKEN_BUDGET)
    }

    pub fn with_limits(provider: Arc<dyn CompletionProvider>, retry: RetryPolicy, token_budget: u64) -> Self {
        Self {
            provider,
            retry,
            ledger: Mutex::new(Ledger {
                remaining: token_budget,
                total: Usage::default(),
                calls: Vec::new(),
            }),
        }
    }

    pub fn provider_id(&self) -> &str {
        self.provider.id()
    }

    pub fn remaining_budget(&self) -> u64 {
        self.ledger.lock().unwrap().remaining
    }

    pub fn total_usage(&self) -> Usage {
        self.ledger.lock().unwrap().total
    }

    pub fn calls(&self) -> Vec<CallRecord> {
        self.ledger.lock().unwrap().calls.clone()
    }

    pub fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, GatewayError> {
        request.validate()?;
        let projected = project_tokens(&request.prompt);
        {
            let ledger = self.ledger.lock().unwrap();
            if projected > ledger.remaining {
                return Err(GatewayError::BudgetExhausted {
                    projected,
                    remaining: ledger.remaining,
                });
            }
        }

        let started = Instant::now();
        let mut retries = 0u32;
        let mut backoff = self.retry.initial_backoff;
        let result = loop {
            match self.provider.complete(request) {
                Ok(reply) => break Ok(reply),
                Err(ProviderError::Transient(msg)) => {
                    if retries >= self.retry.max_retries {
                        break Err(GatewayError::ProviderUnavailable {
                            attempts: retries + 1,
                            last: msg,
                        });
                    }
                    tracing::warn!(attempt = retries + 1, "transient provider error: {msg}");
                    retries += 1;
                    if !backoff.is_zero() {
                        std::thread::sleep(backoff);
                        backoff = backoff.saturating_mul(2);
                    }
                }
                Err(other @ ProviderError::Permanent(_)) => {
                    break Err(GatewayError::ProviderUnavailable {
                        attempts: retries + 1,
                        last: other.to_string(),
                    })
                }
                Err(other) => break Err(GatewayError::Provider(other)),
            }
        };

        let mut ledger = self.ledger.lock().unwrap();
        match result {
            Ok(reply) => {
                ledger.remaining = ledger.remaining.saturating_sub(reply.usage.output_tokens);
                ledger.total.input_tokens += reply.usage.input_tokens;
                ledger.total.output_tokens += reply.usage.output_tokens;
                ledger.calls.push(CallRecord {
                    session_tag: request.session_tag.clone(),
                    prompt_chars: request.prompt.chars().count(),
                    usage: reply.usage,
                    retries,
                    outcome: Ok(()),
                });
                Ok(CompletionResponse {
                    text: reply.text,
                    provider_id: self.provider.id().to_string(),
                    usage: reply.usage,
                    latency: started.elapsed(),
                    retries,
                })
            }
            Err(err) => {
                ledger.calls.push(CallRecord {
                    session_tag: request.session_tag.clone(),
                    prompt_chars: request.prompt.chars().count(),
                    usage: Usage::default(),
                    retries,
                    outcome: Err(err.to_string()),
                });
                Err(err)
            }
        }
    }

    /// Convenience wrapper returning only the reply text.
    pub fn ask(&self, prompt: &str, tag: &str, temperature: f32) -> Result<String, GatewayError> {
        let request = CompletionRequest::new(prompt).with_tag(tag).with_temperature(temperature);
        self.complete(&request).map(|r| r.text)
    }
}

/// Provider driven by a closure; handy for fault injection and fuzzing.
pub struct FnProvider<F> {
    id: String,
    f: F,
}

impl<F> FnProvider<F>
where
    F: Fn(&CompletionRequest) -> Result<String, ProviderError> + Send + Sync,
{
    pub fn new(id: impl Into<String>, f: F) -> Self {
        Self { id: id.into(), f }
    }
}

impl<F> CompletionProvider for FnProvider<F>
where
    F: Fn(&CompletionRequest) -> Result<String, ProviderError> + Send + Sync,
{
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, request: &CompletionRequest) -> Result<ProviderReply, ProviderError> {
        let text = (self.f)(request)?;
        Ok(ProviderReply {
            usage: estimate_usage(&request.prompt, &text),
            text,
        })
    }
}

/// Usage estimate for providers that do not report token counts.
pub fn estimate_usage(prompt: &str, reply: &str) -> Usage {
    Usage {
        input_tokens: project_tokens(prompt),
        output_tokens: crate::text::word_count(reply) as u64,
    }
}

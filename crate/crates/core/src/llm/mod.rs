//! The single language-model function used by every stage, behind a
//! pluggable backend, plus per-kind token accounting.

pub mod features;
pub mod http;
pub mod oracle;
mod usage;

use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use usage::{KindUsage, UsageLedger};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RequestKind {
    Format,
    EvalInfo,
    Evaluate,
    Classify,
    Generate,
}

impl RequestKind {
    pub const ALL: [RequestKind; 5] = [
        RequestKind::Format,
        RequestKind::EvalInfo,
        RequestKind::Evaluate,
        RequestKind::Classify,
        RequestKind::Generate,
    ];
}

pub const MIN_TEMPERATURE: f64 = 0.05;
pub const MAX_TEMPERATURE: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmRequest {
    pub prompt: String,
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
    pub kind: RequestKind,
}

impl LlmRequest {
    pub fn new(kind: RequestKind, prompt: String, temperature: f64, top_p: f64) -> Self {
        Self {
            prompt,
            temperature,
            top_p,
            max_tokens: 1024,
            kind,
        }
    }

    pub fn validate(&self) -> Result<(), LlmError> {
        if !(MIN_TEMPERATURE..=MAX_TEMPERATURE).contains(&self.temperature) {
            return Err(LlmError::InvalidRequest(format!(
                "temperature {} outside [{MIN_TEMPERATURE}, {MAX_TEMPERATURE}]",
                self.temperature
            )));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(LlmError::InvalidRequest(format!("top_p {} outside (0, 1]", self.top_p)));
        }
        if self.max_tokens == 0 {
            return Err(LlmError::InvalidRequest("max_tokens must be positive".into()));
        }
        if self.prompt.is_empty() {
            return Err(LlmError::InvalidRequest("empty prompt".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LlmResponse {
    pub text: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("rate limited after {attempts} attempts")]
    RateLimited { attempts: u32 },
    #[error("provider returned status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed provider reply: {0}")]
    MalformedProviderReply(String),
    #[error("environment variable {0} is not set")]
    MissingApiKey(&'static str),
}

/// A model endpoint. Implementations must be callable from several threads.
pub trait LlmBackend: Send + Sync {
    fn call(&self, req: &LlmRequest) -> Result<LlmResponse, LlmError>;
}

/// Whitespace token count, used wherever a provider reports none.
pub fn whitespace_tokens(s: &str) -> u64 {
    s.split_whitespace().count() as u64
}

/// Validating, accounting front end over a shared backend. One instance per
/// episode keeps the ledgers separate.
pub struct Llm {
    backend: Arc<dyn LlmBackend>,
    ledger: Mutex<UsageLedger>,
}

impl Llm {
    pub fn new(backend: Arc<dyn LlmBackend>) -> Self {
        Self {
            backend,
            ledger: Mutex::new(UsageLedger::default()),
        }
    }

    pub fn complete(&self, req: &LlmRequest) -> Result<LlmResponse, LlmError> {
        req.validate()?;
        let resp = self.backend.call(req)?;
        if resp.text.trim().is_empty() {
            return Err(LlmError::MalformedProviderReply("empty completion".into()));
        }
        self.ledger
            .lock()
            .expect("ledger lock")
            .record(req.kind, resp.prompt_tokens, resp.completion_tokens);
        Ok(resp)
    }

    pub fn usage_report(&self) -> UsageLedger {
        self.ledger.lock().expect("ledger lock").clone()
    }
}

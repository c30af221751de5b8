//! Backend abstraction for chat generation and continuation log-likelihood
//! scoring: a live OpenAI-compatible HTTP client and a deterministic mock.

mod http;
mod mock;
mod rate_limit;

pub use http::{ApiFlavor, HttpBackend, HttpBackendConfig, HttpReply, HttpTransport};
pub use mock::{MockBackend, MockMode, Script, ScriptEntry};
pub use rate_limit::{Clock, FakeClock, RateLimiter, SystemClock};

use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("prompt must be non-empty")]
    EmptyPrompt,
    #[error("continuation must be non-empty")]
    EmptyContinuation,
    #[error("API error (status {status}): {body_excerpt}")]
    Api { status: u16, body_excerpt: String },
    #[error("retries exhausted after {attempts} attempts: {last}")]
    RetriesExhausted { attempts: u32, last: String },
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("malformed API response: {0}")]
    MalformedResponse(String),
    #[error("backend does not support {0}")]
    MissingCapability(&'static str),
    #[error("scripted mock has no response for prompt starting {0:?}")]
    ScriptExhausted(String),
    #[error("backend configuration: {0}")]
    Config(String),
}

/// One generation request.
#[derive(Debug, Clone, PartialEq)]
pub struct LlmRequest {
    pub system: Option<String>,
    pub prompt: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub seed: Option<u64>,
}

impl LlmRequest {
    pub fn new(prompt: impl Into<String>) -> Self {
        LlmRequest {
            system: None,
            prompt: prompt.into(),
            temperature: 0.0,
            max_tokens: 256,
            seed: None,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    fn validate(&self) -> Result<(), LlmError> {
        if self.prompt.trim().is_empty() {
            return Err(LlmError::EmptyPrompt);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LlmResponse {
    pub text: String,
    pub token_count: usize,
    pub latency: Duration,
    pub model_id: String,
}

/// Chat-style generation.
pub trait LlmBackend: Send + Sync {
    fn model_id(&self) -> &str;
    fn complete(&self, req: &LlmRequest) -> Result<LlmResponse, LlmError>;
}

/// Total log-likelihood of a continuation given a prompt.
pub trait LikelihoodScorer: Send + Sync {
    fn loglikelihood(&self, prompt: &str, continuation: &str) -> Result<f64, LlmError>;
}

/// Process-wide call accounting: calls issued, retries spent, hard failures.
#[derive(Debug, Default)]
pub struct CallStats {
    calls: AtomicU64,
    retries: AtomicU64,
    failures: AtomicU64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CallStatsSnapshot {
    pub calls: u64,
    pub retries: u64,
    pub failures: u64,
}

impl CallStats {
    pub fn record_call(&self) {
        self.calls.fetch_add(1, Ordering::Relaxed);
    }

    pub fn record_retry(&self) {
        self.retries.fetch_add(1, Ordering::Relaxed);
    }

    pub fn record_failure(&self) {
        self.failures.fetch_add(1, Ordering::Relaxed);
    }

    pub fn snapshot(&self) -> CallStatsSnapshot {
        CallStatsSnapshot {
            calls: self.calls.load(Ordering::Relaxed),
            retries: self.retries.load(Ordering::Relaxed),
            failures: self.failures.load(Ordering::Relaxed),
        }
    }
}

/// FNV-1a, the stable 64-bit hash used everywhere determinism matters.
pub(crate) fn fnv1a(parts: &[&[u8]]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for part in parts {
        for &byte in *part {
            hash ^= byte as u64;
            hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
        }
        // separator so ("ab","c") != ("a","bc")
        hash ^= 0xff;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Stable seed derivation for per-record, per-stage mock determinism.
pub fn derive_seed(base: u64, parts: &[&str]) -> u64 {
    let mut slices: Vec<&[u8]> = Vec::with_capacity(parts.len() + 1);
    let base_bytes = base.to_le_bytes();
    slices.push(&base_bytes);
    for p in parts {
        slices.push(p.as_bytes());
    }
    fnv1a(&slices)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fnv_is_stable_and_separator_sensitive() {
        assert_eq!(fnv1a(&[b"abc"]), fnv1a(&[b"abc"]));
        assert_ne!(fnv1a(&[b"ab", b"c"]), fnv1a(&[b"a", b"bc"]));
        assert_ne!(fnv1a(&[b"abc"]), fnv1a(&[b"abd"]));
    }

    #[test]
    fn derive_seed_distinguishes_parts() {
        assert_eq!(derive_seed(1, &["p", "gen"]), derive_seed(1, &["p", "gen"]));
        assert_ne!(derive_seed(1, &["p", "gen"]), derive_seed(2, &["p", "gen"]));
        assert_ne!(derive_seed(1, &["p", "gen"]), derive_seed(1, &["p", "rerank"]));
    }

    #[test]
    fn empty_prompt_rejected_by_validation() {
        let req = LlmRequest::new("   ");
        assert!(matches!(req.validate(), Err(LlmError::EmptyPrompt)));
    }
}

//! Live backend speaking the OpenAI-compatible chat-completion JSON shape.
//!
//! Retries transient failures (429/5xx/transport) with exponential backoff,
//! shares a sliding-window rate limit across threads, and scores continuation
//! log-likelihoods through the echo+logprobs completions convention when the
//! endpoint supports it.

use super::rate_limit::{Clock, RateLimiter, SystemClock};
use super::{CallStats, LikelihoodScorer, LlmBackend, LlmError, LlmRequest, LlmResponse};
use crate::metrics::token_count;
use serde_json::json;
use std::sync::Arc;
use std::time::Duration;

/// Auth/naming differences between hosted providers; the wire shape is the
/// same OpenAI-compatible JSON either way.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ApiFlavor {
    OpenAi,
    Gemini,
}

#[derive(Debug, Clone)]
pub struct HttpBackendConfig {
    pub base_url: String,
    pub api_key: String,
    pub flavor: ApiFlavor,
    pub model_id: String,
    pub timeout: Duration,
    pub max_retries: u32,
    pub backoff_base: Duration,
    pub rate_ceiling: usize,
    pub rate_window: Duration,
    /// Whether the endpoint exposes token log-probabilities (checked at
    /// configuration time, not call time).
    pub supports_logprobs: bool,
}

impl HttpBackendConfig {
    pub fn validate(&self) -> Result<(), LlmError> {
        if self.model_id.trim().is_empty() {
            return Err(LlmError::Config("model_id must be set for a live backend".into()));
        }
        if self.base_url.trim().is_empty() {
            return Err(LlmError::Config("base_url must be set for a live backend".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct HttpReply {
    pub status: u16,
    pub body: String,
}

#[derive(Debug, Clone)]
pub enum TransportFailure {
    /// Connect/timeout class errors, worth retrying.
    Transient(String),
    Fatal(String),
}

/// POST-a-JSON-body seam so tests can inject faults without a server.
pub trait HttpTransport: Send + Sync {
    fn post_json(
        &self,
        url: &str,
        headers: &[(String, String)],
        body: &serde_json::Value,
    ) -> Result<HttpReply, TransportFailure>;
}

struct ReqwestTransport {
    client: reqwest::blocking::Client,
}

impl ReqwestTransport {
    fn new(timeout: Duration) -> Result<Self, LlmError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| LlmError::Config(format!("http client: {e}")))?;
        Ok(ReqwestTransport { client })
    }
}

impl HttpTransport for ReqwestTransport {
    fn post_json(
        &self,
        url: &str,
        headers: &[(String, String)],
        body: &serde_json::Value,
    ) -> Result<HttpReply, TransportFailure> {
        let mut req = self.client.post(url).json(body);
        for (k, v) in headers {
            req = req.header(k, v);
        }
        match req.send() {
            Ok(resp) => {
                let status = resp.status().as_u16();
                let body = resp.text().unwrap_or_default();
                Ok(HttpReply { status, body })
            }
            Err(e) if e.is_timeout() || e.is_connect() => {
                Err(TransportFailure::Transient(e.to_string()))
            }
            Err(e) => Err(TransportFailure::Fatal(e.to_string())),
        }
    }
}

pub struct HttpBackend {
    cfg: HttpBackendConfig,
    transport: Box<dyn HttpTransport>,
    limiter: RateLimiter<Arc<dyn Clock>>,
    clock: Arc<dyn Clock>,
    stats: Arc<CallStats>,
}

impl Clock for Arc<dyn Clock> {
    fn now(&self) -> Duration {
        self.as_ref().now()
    }

    fn sleep(&self, d: Duration) {
        self.as_ref().sleep(d)
    }
}

impl HttpBackend {
    pub fn new(cfg: HttpBackendConfig) -> Result<Self, LlmError> {
        cfg.validate()?;
        let transport = Box::new(ReqwestTransport::new(cfg.timeout)?);
        Ok(Self::with_transport(cfg, transport, Arc::new(SystemClock)))
    }

    pub fn with_transport(
        cfg: HttpBackendConfig,
        transport: Box<dyn HttpTransport>,
        clock: Arc<dyn Clock>,
    ) -> Self {
        let limiter = RateLimiter::new(cfg.rate_ceiling, cfg.rate_window, clock.clone());
        HttpBackend {
            cfg,
            transport,
            limiter,
            clock,
            stats: Arc::new(CallStats::default()),
        }
    }

    pub fn stats(&self) -> &Arc<CallStats> {
        &self.stats
    }

    /// Configuration-time capability gate for log-likelihood scoring.
    pub fn require_logprobs(&self) -> Result<(), LlmError> {
        if self.cfg.supports_logprobs {
            Ok(())
        } else {
            Err(LlmError::MissingCapability("token log-probabilities"))
        }
    }

    fn headers(&self) -> Vec<(String, String)> {
        let mut headers = vec![("content-type".to_string(), "application/json".to_string())];
        match self.cfg.flavor {
            ApiFlavor::OpenAi => {
                headers.push(("authorization".to_string(), format!("Bearer {}", self.cfg.api_key)));
            }
            ApiFlavor::Gemini => {
                headers.push(("x-goog-api-key".to_string(), self.cfg.api_key.clone()));
            }
        }
        headers
    }

    fn url(&self, endpoint: &str) -> String {
        format!("{}/{}", self.cfg.base_url.trim_end_matches('/'), endpoint)
    }

    /// Retry transient failures with exponential backoff; anything else is a
    /// typed error immediately.
    fn post_with_retries(
        &self,
        url: &str,
        body: &serde_json::Value,
    ) -> Result<serde_json::Value, LlmError> {
        let mut last = String::new();
        for attempt in 0..=self.cfg.max_retries {
            if attempt > 0 {
                self.stats.record_retry();
                self.clock.sleep(self.cfg.backoff_base * 2u32.pow(attempt - 1));
            }
            self.limiter.acquire();
            self.stats.record_call();
            match self.transport.post_json(url, &self.headers(), body) {
                Ok(reply) if reply.status == 200 => {
                    return serde_json::from_str(&reply.body)
                        .map_err(|e| LlmError::MalformedResponse(e.to_string()));
                }
                Ok(reply) if reply.status == 429 || reply.status >= 500 => {
                    last = format!("status {}", reply.status);
                }
                Ok(reply) => {
                    self.stats.record_failure();
                    return Err(LlmError::Api {
                        status: reply.status,
                        body_excerpt: reply.body.chars().take(200).collect(),
                    });
                }
                Err(TransportFailure::Transient(e)) => last = e,
                Err(TransportFailure::Fatal(e)) => {
                    self.stats.record_failure();
                    return Err(LlmError::Transport(e));
                }
            }
        }
        self.stats.record_failure();
        Err(LlmError::RetriesExhausted {
            attempts: self.cfg.max_retries + 1,
            last,
        })
    }
}

impl LlmBackend for HttpBackend {
    fn model_id(&self) -> &str {
        &self.cfg.model_id
    }

    fn complete(&self, req: &LlmRequest) -> Result<LlmResponse, LlmError> {
        req.validate()?;
        let mut messages = Vec::new();
        if let Some(system) = &req.system {
            messages.push(json!({"role": "system", "content": system}));
        }
        messages.push(json!({"role": "user", "content": req.prompt}));
        let mut body = json!({
            "model": self.cfg.model_id,
            "messages": messages,
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
        });
        if let Some(seed) = req.seed {
            body["seed"] = json!(seed);
        }

        let started = self.clock.now();
        let value = self.post_with_retries(&self.url("chat/completions"), &body)?;
        let text = value["choices"][0]["message"]["content"]
            .as_str()
            .ok_or_else(|| LlmError::MalformedResponse("missing choices[0].message.content".into()))?
            .to_string();
        let token_count = value["usage"]["completion_tokens"]
            .as_u64()
            .map(|n| n as usize)
            .unwrap_or_else(|| crate::metrics::token_count(&text));
        let model_id = value["model"].as_str().unwrap_or(&self.cfg.model_id).to_string();
        Ok(LlmResponse {
            text,
            token_count,
            latency: self.clock.now().saturating_sub(started),
            model_id,
        })
    }
}

impl LikelihoodScorer for HttpBackend {
    fn loglikelihood(&self, prompt: &str, continuation: &str) -> Result<f64, LlmError> {
        self.require_logprobs()?;
        if continuation.trim().is_empty() {
            return Err(LlmError::EmptyContinuation);
        }
        let full = format!("{prompt}{continuation}");
        let body = json!({
            "model": self.cfg.model_id,
            "prompt": full,
            "max_tokens": 0,
            "echo": true,
            "logprobs": 0,
        });
        let value = self.post_with_retries(&self.url("completions"), &body)?;
        let logprobs = &value["choices"][0]["logprobs"];
        let token_logprobs = logprobs["token_logprobs"]
            .as_array()
            .ok_or_else(|| LlmError::MalformedResponse("missing logprobs.token_logprobs".into()))?;
        let offsets = logprobs["text_offset"]
            .as_array()
            .ok_or_else(|| LlmError::MalformedResponse("missing logprobs.text_offset".into()))?;
        let boundary = prompt.len();
        let mut total = 0.0;
        for (lp, off) in token_logprobs.iter().zip(offsets.iter()) {
            if off.as_u64().unwrap_or(0) as usize >= boundary {
                total += lp.as_f64().unwrap_or(0.0);
            }
        }
        if !total.is_finite() {
            return Err(LlmError::MalformedResponse("non-finite log-likelihood".into()));
        }
        Ok(total)
    }
}

/// Uses the shared tokenizer to approximate completion token counts when the
/// server omits usage data.
#[allow(dead_code)]
fn approximate_tokens(text: &str) -> usize {
    token_count(text)
}

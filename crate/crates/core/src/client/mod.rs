//! Clients for OpenAI-compatible inference endpoints and the scorer service.
//!
//! Everything network-facing goes through [`Transport`], so the retry,
//! cache and concurrency logic in [`LlmClient`] runs unchanged against the
//! in-process stubs in [`stub`].

mod cache;
mod llm;
pub mod replay;
pub mod scorer;
pub mod stub;

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

pub use cache::{cache_key, DiskCache, MemoryCache, NoCache, ResponseCache};
pub use llm::{
    ApiStyle, AttemptRecord, DecodingParams, GenerationResult, Generator, LlmClient, LogprobModel,
    TokenLogprob, Usage,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TransportError {
    #[error("http status {status}")]
    Status {
        status: u16,
        body: String,
        retry_after_ms: Option<u64>,
    },
    #[error("request timed out")]
    Timeout,
    #[error("io: {0}")]
    Io(String),
    #[error("undecodable response: {0}")]
    Decode(String),
}

impl TransportError {
    pub fn status(status: u16, body: impl Into<String>) -> Self {
        TransportError::Status {
            status,
            body: body.into(),
            retry_after_ms: None,
        }
    }

    fn is_retryable(&self) -> bool {
        match self {
            TransportError::Status { status, .. } => *status == 429 || (500..600).contains(status),
            TransportError::Timeout | TransportError::Io(_) => true,
            TransportError::Decode(_) => false,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClientError {
    #[error("request timed out after {attempts} attempts")]
    Timeout { attempts: u32 },
    #[error("rate limited after {attempts} attempts")]
    RateLimited { attempts: u32 },
    #[error("http error {status}: {body}")]
    Http { status: u16, body: String },
    #[error("io error: {0}")]
    Io(String),
    #[error("bad response: {0}")]
    Decode(String),
    #[error("model {0} does not expose token log-probabilities")]
    LogprobsUnsupported(String),
    #[error("embedding dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("empty request batch")]
    EmptyBatch,
    #[error("cache: {0}")]
    Cache(String),
}

impl ClientError {
    pub fn http_status(&self) -> Option<u16> {
        match self {
            ClientError::Http { status, .. } => Some(*status),
            _ => None,
        }
    }
}

/// A JSON-over-HTTP request sink.
pub trait Transport: Send + Sync {
    fn post_json(&self, path: &str, body: &Value) -> Result<Value, TransportError>;

    fn get_json(&self, path: &str) -> Result<Value, TransportError> {
        Err(TransportError::Io(format!("GET {path} not supported by this transport")))
    }
}

/// Blocking HTTP transport. The bearer token is read once at construction.
pub struct HttpTransport {
    agent: ureq::Agent,
    base_url: String,
    api_key: Option<String>,
}

impl HttpTransport {
    pub fn new(base_url: impl Into<String>, api_key: Option<String>, timeout: Duration) -> Self {
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build();
        HttpTransport {
            agent: config.into(),
            base_url: base_url.into().trim_end_matches('/').to_string(),
            api_key,
        }
    }

    pub fn from_endpoint(cfg: &EndpointConfig) -> Self {
        let key = cfg
            .api_key_env
            .as_deref()
            .and_then(|var| std::env::var(var).ok());
        HttpTransport::new(&cfg.base_url, key, Duration::from_millis(cfg.timeout_ms))
    }

    fn finish(result: Result<ureq::http::Response<ureq::Body>, ureq::Error>) -> Result<Value, TransportError> {
        let mut resp = match result {
            Ok(r) => r,
            Err(ureq::Error::Timeout(_)) => return Err(TransportError::Timeout),
            Err(e) => return Err(TransportError::Io(e.to_string())),
        };
        let status = resp.status().as_u16();
        let retry_after_ms = resp
            .headers()
            .get("retry-after")
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.trim().parse::<f64>().ok())
            .map(|secs| (secs * 1000.0) as u64);
        let body = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| TransportError::Io(e.to_string()))?;
        if !(200..300).contains(&status) {
            return Err(TransportError::Status {
                status,
                body,
                retry_after_ms,
            });
        }
        serde_json::from_str(&body).map_err(|e| TransportError::Decode(e.to_string()))
    }
}

impl Transport for HttpTransport {
    fn post_json(&self, path: &str, body: &Value) -> Result<Value, TransportError> {
        let url = format!("{}{}", self.base_url, path);
        let mut req = self.agent.post(&url).header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        Self::finish(req.send(body.to_string()))
    }

    fn get_json(&self, path: &str) -> Result<Value, TransportError> {
        let url = format!("{}{}", self.base_url, path);
        let mut req = self.agent.get(&url);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        Self::finish(req.call())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub backoff_base_ms: u64,
    pub max_backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 5,
            backoff_base_ms: 500,
            max_backoff_ms: 30_000,
        }
    }
}

impl RetryPolicy {
    /// Delay before retry number `retry` (1-based): base * 2^(retry-1),
    /// capped. Non-decreasing in `retry`.
    pub fn delay_ms(&self, retry: u32) -> u64 {
        let factor = 1u64.checked_shl(retry.saturating_sub(1)).unwrap_or(u64::MAX);
        self.backoff_base_ms.saturating_mul(factor).min(self.max_backoff_ms)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndpointConfig {
    pub base_url: String,
    pub model_id: String,
    /// Name of the environment variable holding the API key.
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default = "default_parallel")]
    pub max_parallel: usize,
    #[serde(default)]
    pub retry: RetryPolicy,
    #[serde(default = "default_timeout")]
    pub timeout_ms: u64,
    #[serde(default)]
    pub logprobs: bool,
    #[serde(default)]
    pub api: ApiStyle,
    #[serde(default)]
    pub embedding_dim: Option<usize>,
}

fn default_parallel() -> usize {
    4
}

fn default_timeout() -> u64 {
    60_000
}

impl EndpointConfig {
    pub fn new(base_url: impl Into<String>, model_id: impl Into<String>) -> Self {
        EndpointConfig {
            base_url: base_url.into(),
            model_id: model_id.into(),
            api_key_env: None,
            max_parallel: default_parallel(),
            retry: RetryPolicy::default(),
            timeout_ms: default_timeout(),
            logprobs: false,
            api: ApiStyle::default(),
            embedding_dim: None,
        }
    }
}

/// Counting semaphore bounding in-flight requests.
#[derive(Debug)]
pub(crate) struct Semaphore {
    permits: Mutex<usize>,
    cv: Condvar,
}

pub(crate) struct Permit<'a>(&'a Semaphore);

impl Semaphore {
    pub(crate) fn new(n: usize) -> Self {
        Semaphore {
            permits: Mutex::new(n.max(1)),
            cv: Condvar::new(),
        }
    }

    pub(crate) fn acquire(&self) -> Permit<'_> {
        let mut p = self.permits.lock().unwrap();
        while *p == 0 {
            p = self.cv.wait(p).unwrap();
        }
        *p -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.permits.lock().unwrap() += 1;
        self.0.cv.notify_one();
    }
}

use std::collections::HashMap;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{
    cache_key, ClientError, EndpointConfig, MemoryCache, ResponseCache, Semaphore, Transport,
    TransportError,
};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ApiStyle {
    /// `POST /v1/completions`
    #[default]
    Completions,
    /// `POST /v1/chat/completions`
    Chat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodingParams {
    pub temperature: f64,
    pub max_tokens: u32,
    pub stop: Vec<String>,
}

impl Default for DecodingParams {
    fn default() -> Self {
        DecodingParams {
            temperature: 0.0,
            max_tokens: 128,
            stop: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationResult {
    pub text: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub model_id: String,
    pub latency_ms: u64,
    pub cached: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenLogprob {
    pub token: String,
    /// `None` for positions the provider does not score (usually the first).
    pub logprob: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct Usage {
    pub network_calls: u64,
    pub cache_hits: u64,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttemptRecord {
    pub key: String,
    pub attempt: u32,
    pub outcome: String,
    pub delay_ms: u64,
}

pub trait Generator: Send + Sync {
    fn model_id(&self) -> &str;
    fn complete(&self, prompt: &str, params: &DecodingParams) -> Result<GenerationResult, ClientError>;
}

pub trait LogprobModel: Send + Sync {
    fn model_id(&self) -> &str;
    fn token_logprobs(&self, text: &str) -> Result<Vec<TokenLogprob>, ClientError>;
}

type Sleeper = Arc<dyn Fn(Duration) + Send + Sync>;

/// OpenAI-compatible endpoint client with retries, a response cache keyed
/// by the canonical request, and a bound on in-flight requests.
pub struct LlmClient {
    config: EndpointConfig,
    transport: Arc<dyn Transport>,
    cache: Arc<dyn ResponseCache>,
    limiter: Semaphore,
    key_locks: Mutex<HashMap<String, Arc<Mutex<()>>>>,
    usage: Mutex<Usage>,
    attempts: Mutex<Vec<AttemptRecord>>,
    sleeper: Sleeper,
}

impl LlmClient {
    pub fn new(config: EndpointConfig, transport: Arc<dyn Transport>) -> Self {
        LlmClient {
            limiter: Semaphore::new(config.max_parallel),
            config,
            transport,
            cache: Arc::new(MemoryCache::new()),
            key_locks: Mutex::new(HashMap::new()),
            usage: Mutex::new(Usage::default()),
            attempts: Mutex::new(Vec::new()),
            sleeper: Arc::new(std::thread::sleep),
        }
    }

    pub fn with_cache(mut self, cache: Arc<dyn ResponseCache>) -> Self {
        self.cache = cache;
        self
    }

    /// Replaces `thread::sleep` for backoff waits.
    pub fn with_sleeper(mut self, sleeper: impl Fn(Duration) + Send + Sync + 'static) -> Self {
        self.sleeper = Arc::new(sleeper);
        self
    }

    pub fn config(&self) -> &EndpointConfig {
        &self.config
    }

    pub fn usage(&self) -> Usage {
        self.usage.lock().unwrap().clone()
    }

    pub fn attempt_log(&self) -> Vec<AttemptRecord> {
        self.attempts.lock().unwrap().clone()
    }

    fn key_lock(&self, key: &str) -> Arc<Mutex<()>> {
        self.key_locks
            .lock()
            .unwrap()
            .entry(key.to_string())
            .or_default()
            .clone()
    }

    /// Sends `body` to `path`, serving from the cache when possible. Returns
    /// the response, the observed latency, and whether it was a cache hit.
    fn request(&self, path: &str, body: Value) -> Result<(Value, u64, bool), ClientError> {
        let key = cache_key(&json!({ "path": path, "body": body }));
        // identical concurrent requests wait here; the loser then hits the cache
        let lock = self.key_lock(&key);
        let _guard = lock.lock().unwrap();
        if let Some(record) = self.cache.get(&key)? {
            self.usage.lock().unwrap().cache_hits += 1;
            let latency = record["latency_ms"].as_u64().unwrap_or(0);
            return Ok((record["response"].clone(), latency, true));
        }
        let _permit = self.limiter.acquire();
        let start = Instant::now();
        let response = self.send_with_retry(&key, path, &body)?;
        let latency = start.elapsed().as_millis() as u64;
        self.cache
            .put(&key, &json!({ "response": response, "latency_ms": latency }))?;
        Ok((response, latency, false))
    }

    fn send_with_retry(&self, key: &str, path: &str, body: &Value) -> Result<Value, ClientError> {
        let policy = &self.config.retry;
        let max_attempts = policy.max_attempts.max(1);
        let mut attempt = 0;
        loop {
            attempt += 1;
            self.usage.lock().unwrap().network_calls += 1;
            let result = self.transport.post_json(path, body);
            let outcome = match &result {
                Ok(_) => "ok".to_string(),
                Err(e) => e.to_string(),
            };
            let err = match result {
                Ok(v) => {
                    self.log_attempt(key, attempt, outcome, 0);
                    return Ok(v);
                }
                Err(e) => e,
            };
            if !err.is_retryable() || attempt >= max_attempts {
                self.log_attempt(key, attempt, outcome, 0);
                return Err(match err {
                    TransportError::Status { status: 429, .. } => ClientError::RateLimited { attempts: attempt },
                    TransportError::Status { status, body, .. } => ClientError::Http { status, body },
                    TransportError::Timeout => ClientError::Timeout { attempts: attempt },
                    TransportError::Io(m) => ClientError::Io(m),
                    TransportError::Decode(m) => ClientError::Decode(m),
                });
            }
            let mut delay = policy.delay_ms(attempt);
            if let TransportError::Status {
                retry_after_ms: Some(ra), ..
            } = err
            {
                delay = delay.max(ra.min(policy.max_backoff_ms));
            }
            log::warn!("{path}: attempt {attempt} failed ({outcome}); retrying in {delay} ms");
            self.log_attempt(key, attempt, outcome, delay);
            (self.sleeper)(Duration::from_millis(delay));
        }
    }

    fn log_attempt(&self, key: &str, attempt: u32, outcome: String, delay_ms: u64) {
        self.attempts.lock().unwrap().push(AttemptRecord {
            key: key.to_string(),
            attempt,
            outcome,
            delay_ms,
        });
    }

    pub fn complete(&self, prompt: &str, params: &DecodingParams) -> Result<GenerationResult, ClientError> {
        let (path, mut body) = match self.config.api {
            ApiStyle::Completions => (
                "/v1/completions",
                json!({ "model": self.config.model_id, "prompt": prompt }),
            ),
            ApiStyle::Chat => (
                "/v1/chat/completions",
                json!({
                    "model": self.config.model_id,
                    "messages": [{ "role": "user", "content": prompt }],
                }),
            ),
        };
        body["temperature"] = json!(params.temperature);
        body["max_tokens"] = json!(params.max_tokens);
        if !params.stop.is_empty() {
            body["stop"] = json!(params.stop);
        }
        let (resp, latency_ms, cached) = self.request(path, body)?;
        let choice = resp["choices"]
            .get(0)
            .ok_or_else(|| ClientError::Decode("response has no choices".into()))?;
        let text = match self.config.api {
            ApiStyle::Completions => choice["text"].as_str(),
            ApiStyle::Chat => choice["message"]["content"].as_str(),
        }
        .ok_or_else(|| ClientError::Decode("choice has no text".into()))?
        .to_string();
        let prompt_tokens = resp["usage"]["prompt_tokens"]
            .as_u64()
            .unwrap_or_else(|| prompt.split_whitespace().count() as u64);
        let completion_tokens = resp["usage"]["completion_tokens"]
            .as_u64()
            .unwrap_or_else(|| text.split_whitespace().count() as u64);
        if !cached {
            let mut u = self.usage.lock().unwrap();
            u.prompt_tokens += prompt_tokens;
            u.completion_tokens += completion_tokens;
        }
        Ok(GenerationResult {
            text,
            prompt_tokens,
            completion_tokens,
            model_id: self.config.model_id.clone(),
            latency_ms,
            cached,
        })
    }

    /// Scores `text` with `echo` on the legacy completions endpoint.
    pub fn token_logprobs(&self, text: &str) -> Result<Vec<TokenLogprob>, ClientError> {
        if !self.config.logprobs {
            return Err(ClientError::LogprobsUnsupported(self.config.model_id.clone()));
        }
        let body = json!({
            "model": self.config.model_id,
            "prompt": text,
            "max_tokens": 0,
            "echo": true,
            "logprobs": 0,
            "temperature": 0.0,
        });
        let (resp, _, _) = self.request("/v1/completions", body)?;
        parse_logprobs(&resp)
    }

    pub fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, ClientError> {
        if texts.is_empty() {
            return Err(ClientError::EmptyBatch);
        }
        let body = json!({ "model": self.config.model_id, "input": texts });
        let (resp, _, _) = self.request("/v1/embeddings", body)?;
        let data = resp["data"]
            .as_array()
            .ok_or_else(|| ClientError::Decode("embeddings response has no data".into()))?;
        if data.len() != texts.len() {
            return Err(ClientError::Decode(format!(
                "expected {} embeddings, got {}",
                texts.len(),
                data.len()
            )));
        }
        let mut rows: Vec<(usize, Vec<f32>)> = Vec::with_capacity(data.len());
        for (pos, item) in data.iter().enumerate() {
            let index = item["index"].as_u64().map(|i| i as usize).unwrap_or(pos);
            let vec: Vec<f32> = serde_json::from_value(item["embedding"].clone())
                .map_err(|e| ClientError::Decode(e.to_string()))?;
            rows.push((index, vec));
        }
        rows.sort_by_key(|(i, _)| *i);
        let expected = self.config.embedding_dim.unwrap_or(rows[0].1.len());
        if let Some((_, bad)) = rows.iter().find(|(_, v)| v.len() != expected) {
            return Err(ClientError::DimensionMismatch {
                expected,
                got: bad.len(),
            });
        }
        Ok(rows.into_iter().map(|(_, v)| v).collect())
    }
}

pub(crate) fn parse_logprobs(resp: &Value) -> Result<Vec<TokenLogprob>, ClientError> {
    let lp = &resp["choices"][0]["logprobs"];
    let tokens = lp["tokens"]
        .as_array()
        .ok_or_else(|| ClientError::Decode("response has no logprobs.tokens".into()))?;
    let values = lp["token_logprobs"]
        .as_array()
        .ok_or_else(|| ClientError::Decode("response has no logprobs.token_logprobs".into()))?;
    if tokens.len() != values.len() {
        return Err(ClientError::Decode("tokens and token_logprobs differ in length".into()));
    }
    tokens
        .iter()
        .zip(values)
        .map(|(t, v)| {
            let token = t
                .as_str()
                .ok_or_else(|| ClientError::Decode("non-string token".into()))?
                .to_string();
            let logprob = match v {
                Value::Null => None,
                other => Some(
                    other
                        .as_f64()
                        .ok_or_else(|| ClientError::Decode("non-numeric logprob".into()))?,
                ),
            };
            Ok(TokenLogprob { token, logprob })
        })
        .collect()
}

impl Generator for LlmClient {
    fn model_id(&self) -> &str {
        &self.config.model_id
    }

    fn complete(&self, prompt: &str, params: &DecodingParams) -> Result<GenerationResult, ClientError> {
        LlmClient::complete(self, prompt, params)
    }
}

impl LogprobModel for LlmClient {
    fn model_id(&self) -> &str {
        &self.config.model_id
    }

    fn token_logprobs(&self, text: &str) -> Result<Vec<TokenLogprob>, ClientError> {
        LlmClient::token_logprobs(self, text)
    }
}

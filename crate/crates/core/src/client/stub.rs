//! In-process endpoints for tests, examples and offline dry runs.

use std::collections::VecDeque;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde_json::{json, Value};

use super::{Transport, TransportError};
use crate::compressor::hash_embedding;

/// Splits text into tokens that carry their leading whitespace, so the
/// tokens concatenate back to the input.
pub fn split_keep_whitespace(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut in_word = false;
    for (i, c) in text.char_indices() {
        if c.is_whitespace() {
            if in_word {
                out.push(&text[start..i]);
                start = i;
                in_word = false;
            }
        } else {
            in_word = true;
        }
    }
    if start < text.len() {
        out.push(&text[start..]);
    }
    out
}

#[derive(Clone)]
pub enum StubCompletion {
    /// The first `n` whitespace tokens of the prompt.
    EchoFirst(usize),
    /// The last `n` tokens before a trailing `Person2:` cue.
    EchoLast(usize),
    Fixed(String),
}

#[derive(Clone)]
pub enum StubLogprobs {
    Constant(f64),
    /// Called with (token, position).
    PerToken(Arc<dyn Fn(&str, usize) -> f64 + Send + Sync>),
}

/// A deterministic OpenAI-compatible endpoint. Counts every request it
/// serves and tracks the peak number of concurrent requests.
pub struct StubLlm {
    completion: StubCompletion,
    logprobs: StubLogprobs,
    embedding_dim: usize,
    delay: Duration,
    calls: AtomicUsize,
    in_flight: AtomicUsize,
    peak_in_flight: AtomicUsize,
}

impl Default for StubLlm {
    fn default() -> Self {
        StubLlm::new(StubCompletion::EchoFirst(5))
    }
}

impl StubLlm {
    pub fn new(completion: StubCompletion) -> Self {
        StubLlm {
            completion,
            logprobs: StubLogprobs::Constant(0.0),
            embedding_dim: crate::compressor::HASH_EMBEDDING_DIM,
            delay: Duration::ZERO,
            calls: AtomicUsize::new(0),
            in_flight: AtomicUsize::new(0),
            peak_in_flight: AtomicUsize::new(0),
        }
    }

    pub fn with_logprobs(mut self, logprobs: StubLogprobs) -> Self {
        self.logprobs = logprobs;
        self
    }

    /// Holds each request open for `delay`, to make overlap observable.
    pub fn with_delay(mut self, delay: Duration) -> Self {
        self.delay = delay;
        self
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn peak_in_flight(&self) -> usize {
        self.peak_in_flight.load(Ordering::SeqCst)
    }

    fn generate(&self, prompt: &str) -> String {
        let words: Vec<&str> = prompt.split_whitespace().collect();
        match &self.completion {
            StubCompletion::EchoFirst(n) => words.iter().take(*n).copied().collect::<Vec<_>>().join(" "),
            StubCompletion::EchoLast(n) => {
                let end = if words.last() == Some(&"Person2:") {
                    words.len() - 1
                } else {
                    words.len()
                };
                words[end.saturating_sub(*n)..end].join(" ")
            }
            StubCompletion::Fixed(t) => t.clone(),
        }
    }

    fn completion_response(&self, prompt: &str, body: &Value, chat: bool) -> Value {
        let prompt_tokens = prompt.split_whitespace().count();
        if body["echo"].as_bool() == Some(true) {
            let tokens = split_keep_whitespace(prompt);
            let lps: Vec<f64> = tokens
                .iter()
                .enumerate()
                .map(|(i, t)| match &self.logprobs {
                    StubLogprobs::Constant(v) => *v,
                    StubLogprobs::PerToken(f) => f(t, i),
                })
                .collect();
            return json!({
                "choices": [{
                    "text": prompt,
                    "index": 0,
                    "logprobs": { "tokens": tokens, "token_logprobs": lps },
                }],
                "usage": { "prompt_tokens": prompt_tokens, "completion_tokens": 0 },
            });
        }
        let text = self.generate(prompt);
        let completion_tokens = text.split_whitespace().count();
        let choice = if chat {
            json!({ "index": 0, "message": { "role": "assistant", "content": text } })
        } else {
            json!({ "index": 0, "text": text })
        };
        json!({
            "choices": [choice],
            "usage": { "prompt_tokens": prompt_tokens, "completion_tokens": completion_tokens },
        })
    }
}

impl Transport for StubLlm {
    fn post_json(&self, path: &str, body: &Value) -> Result<Value, TransportError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        self.peak_in_flight.fetch_max(now, Ordering::SeqCst);
        if !self.delay.is_zero() {
            std::thread::sleep(self.delay);
        }
        let result = match path {
            "/v1/completions" => match body["prompt"].as_str() {
                Some(p) => Ok(self.completion_response(p, body, false)),
                None => Err(TransportError::status(400, "missing prompt")),
            },
            "/v1/chat/completions" => match body["messages"]
                .as_array()
                .and_then(|m| m.last())
                .and_then(|m| m["content"].as_str())
            {
                Some(p) => Ok(self.completion_response(p, body, true)),
                None => Err(TransportError::status(400, "missing messages")),
            },
            "/v1/embeddings" => match body["input"].as_array() {
                Some(items) if !items.is_empty() => {
                    let data: Vec<Value> = items
                        .iter()
                        .enumerate()
                        .map(|(i, t)| {
                            let v = hash_embedding(t.as_str().unwrap_or_default(), self.embedding_dim);
                            json!({ "index": i, "object": "embedding", "embedding": v })
                        })
                        .collect();
                    Ok(json!({ "object": "list", "data": data, "model": body["model"] }))
                }
                _ => Err(TransportError::status(400, "missing input")),
            },
            other => Err(TransportError::status(404, format!("no route {other}"))),
        };
        self.in_flight.fetch_sub(1, Ordering::SeqCst);
        result
    }
}

/// Replies from a fixed script, in order, and records what was sent.
#[derive(Default)]
pub struct ScriptedTransport {
    script: Mutex<VecDeque<Result<Value, TransportError>>>,
    sent: Mutex<Vec<(String, Value)>>,
}

impl ScriptedTransport {
    pub fn new(script: impl IntoIterator<Item = Result<Value, TransportError>>) -> Self {
        ScriptedTransport {
            script: Mutex::new(script.into_iter().collect()),
            sent: Mutex::new(Vec::new()),
        }
    }

    pub fn sent(&self) -> Vec<(String, Value)> {
        self.sent.lock().unwrap().clone()
    }
}

impl Transport for ScriptedTransport {
    fn post_json(&self, path: &str, body: &Value) -> Result<Value, TransportError> {
        self.sent.lock().unwrap().push((path.to_string(), body.clone()));
        self.script
            .lock()
            .unwrap()
            .pop_front()
            .unwrap_or_else(|| Err(TransportError::Io("script exhausted".into())))
    }
}

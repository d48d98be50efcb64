//! Client side of the scorer service (summarizers, embedders and learned
//! metrics behind HTTP), plus an in-process copy of its deterministic test
//! mode.
//!
//! Wire contract, all bodies `application/json`:
//!
//! | route             | request                                              | response                          |
//! |-------------------|------------------------------------------------------|-----------------------------------|
//! | `POST /summarize` | `{summarizer, utterances:[{speaker,text}]}`          | `{summary, model_version}`        |
//! | `POST /embed`     | `{model, texts:[..]}`                                | `{vectors:[[..]], dim}`           |
//! | `POST /score`     | `{metric, pairs:[{context,candidate,reference}]}`    | `{scores:[..]}`                   |
//! | `GET /health`     |                                                      | `{status, loaded_models:[..]}`    |

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{ClientError, Transport, TransportError};
use crate::compressor::{hash_embedding, HASH_EMBEDDING_DIM};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpeakerTurn {
    pub speaker: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummarizeRequest {
    pub summarizer: String,
    pub utterances: Vec<SpeakerTurn>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummarizeResponse {
    pub summary: String,
    pub model_version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedRequest {
    pub model: String,
    pub texts: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedResponse {
    pub vectors: Vec<Vec<f32>>,
    pub dim: usize,
    #[serde(default)]
    pub normalized: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScorePair {
    #[serde(default)]
    pub context: String,
    pub candidate: String,
    pub reference: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub metric: String,
    pub pairs: Vec<ScorePair>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub scores: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub loaded_models: Vec<String>,
}

fn to_client(e: TransportError) -> ClientError {
    match e {
        TransportError::Status { status, body, .. } => ClientError::Http { status, body },
        TransportError::Timeout => ClientError::Timeout { attempts: 1 },
        TransportError::Io(m) => ClientError::Io(m),
        TransportError::Decode(m) => ClientError::Decode(m),
    }
}

fn decode<T: serde::de::DeserializeOwned>(v: Value) -> Result<T, ClientError> {
    serde_json::from_value(v).map_err(|e| ClientError::Decode(e.to_string()))
}

#[derive(Clone)]
pub struct ScorerClient {
    transport: Arc<dyn Transport>,
}

impl ScorerClient {
    pub fn new(transport: Arc<dyn Transport>) -> Self {
        ScorerClient { transport }
    }

    /// A client wired to the in-process deterministic test service.
    pub fn offline() -> Self {
        ScorerClient::new(Arc::new(StubScorer::default()))
    }

    fn post<Req: Serialize, Resp: serde::de::DeserializeOwned>(
        &self,
        path: &str,
        req: &Req,
    ) -> Result<Resp, ClientError> {
        let body = serde_json::to_value(req).expect("request serializes");
        decode(self.transport.post_json(path, &body).map_err(to_client)?)
    }

    pub fn summarize(&self, req: &SummarizeRequest) -> Result<SummarizeResponse, ClientError> {
        self.post("/summarize", req)
    }

    pub fn embed(&self, model: &str, texts: &[String]) -> Result<EmbedResponse, ClientError> {
        if texts.is_empty() {
            return Err(ClientError::EmptyBatch);
        }
        let resp: EmbedResponse = self.post(
            "/embed",
            &EmbedRequest {
                model: model.to_string(),
                texts: texts.to_vec(),
            },
        )?;
        if resp.vectors.len() != texts.len() {
            return Err(ClientError::Decode(format!(
                "expected {} vectors, got {}",
                texts.len(),
                resp.vectors.len()
            )));
        }
        if let Some(bad) = resp.vectors.iter().find(|v| v.len() != resp.dim) {
            return Err(ClientError::DimensionMismatch {
                expected: resp.dim,
                got: bad.len(),
            });
        }
        Ok(resp)
    }

    pub fn score(&self, metric: &str, pairs: &[ScorePair]) -> Result<Vec<f64>, ClientError> {
        let resp: ScoreResponse = self.post(
            "/score",
            &ScoreRequest {
                metric: metric.to_string(),
                pairs: pairs.to_vec(),
            },
        )?;
        if resp.scores.len() != pairs.len() {
            return Err(ClientError::Decode(format!(
                "expected {} scores, got {}",
                pairs.len(),
                resp.scores.len()
            )));
        }
        Ok(resp.scores)
    }

    pub fn health(&self) -> Result<Health, ClientError> {
        decode(self.transport.get_json("/health").map_err(to_client)?)
    }
}

pub const ECHO_SUMMARY_TOKENS: usize = 30;

/// Output of the echo summarizer: the first 30 whitespace tokens of the
/// `Speaker: text` lines joined with spaces.
pub fn echo_summary(utterances: &[SpeakerTurn]) -> String {
    utterances
        .iter()
        .flat_map(|u| std::iter::once(format!("{}:", u.speaker)).chain(u.text.split_whitespace().map(str::to_string)))
        .take(ECHO_SUMMARY_TOKENS)
        .collect::<Vec<_>>()
        .join(" ")
}

/// The scorer service's deterministic test mode, in process: echo
/// summarizers, hash embedders and a constant 0.5 scorer.
pub struct StubScorer {
    pub summarizers: Vec<String>,
    pub embedders: Vec<String>,
    pub metrics: Vec<String>,
    pub constant_score: f64,
    pub max_batch: usize,
}

impl Default for StubScorer {
    fn default() -> Self {
        StubScorer {
            summarizers: ["bart-d", "pegasus-cd", "pegasus-ds"].map(String::from).to_vec(),
            embedders: ["simcse", "sentence-transformers"].map(String::from).to_vec(),
            metrics: ["bleurt", "deb"].map(String::from).to_vec(),
            constant_score: 0.5,
            max_batch: 256,
        }
    }
}

impl StubScorer {
    fn summarize(&self, body: &Value) -> Result<Value, TransportError> {
        let req: SummarizeRequest =
            serde_json::from_value(body.clone()).map_err(|e| TransportError::status(422, e.to_string()))?;
        if !self.summarizers.contains(&req.summarizer) {
            return Err(TransportError::status(404, format!("unknown summarizer {}", req.summarizer)));
        }
        if let Some(bad) = req
            .utterances
            .iter()
            .find(|u| u.speaker != "Person1" && u.speaker != "Person2")
        {
            return Err(TransportError::status(422, format!("bad speaker {}", bad.speaker)));
        }
        Ok(json!({ "summary": echo_summary(&req.utterances), "model_version": format!("{}-echo", req.summarizer) }))
    }

    fn embed(&self, body: &Value) -> Result<Value, TransportError> {
        let req: EmbedRequest =
            serde_json::from_value(body.clone()).map_err(|e| TransportError::status(422, e.to_string()))?;
        if !self.embedders.contains(&req.model) {
            return Err(TransportError::status(404, format!("unknown model {}", req.model)));
        }
        if req.texts.is_empty() {
            return Err(TransportError::status(422, "empty texts"));
        }
        if req.texts.len() > self.max_batch {
            return Err(TransportError::status(413, "batch too large"));
        }
        // salt by model id so the two embedders disagree slightly
        let vectors: Vec<Vec<f32>> = req
            .texts
            .iter()
            .map(|t| hash_embedding(&format!("{} {}", req.model, t), HASH_EMBEDDING_DIM))
            .collect();
        Ok(json!({ "vectors": vectors, "dim": HASH_EMBEDDING_DIM, "normalized": true }))
    }

    fn score(&self, body: &Value) -> Result<Value, TransportError> {
        let req: ScoreRequest =
            serde_json::from_value(body.clone()).map_err(|e| TransportError::status(422, e.to_string()))?;
        if !self.metrics.contains(&req.metric) {
            return Err(TransportError::status(404, format!("unknown metric {}", req.metric)));
        }
        if req.pairs.is_empty() {
            return Err(TransportError::status(422, "empty pairs"));
        }
        if req.metric == "deb" && req.pairs.iter().any(|p| p.context.trim().is_empty()) {
            return Err(TransportError::status(422, "deb requires context"));
        }
        Ok(json!({ "scores": vec![self.constant_score; req.pairs.len()] }))
    }
}

impl Transport for StubScorer {
    fn post_json(&self, path: &str, body: &Value) -> Result<Value, TransportError> {
        match path {
            "/summarize" => self.summarize(body),
            "/embed" => self.embed(body),
            "/score" => self.score(body),
            other => Err(TransportError::status(404, format!("no route {other}"))),
        }
    }

    fn get_json(&self, path: &str) -> Result<Value, TransportError> {
        match path {
            "/health" => {
                let models: Vec<&String> = self
                    .summarizers
                    .iter()
                    .chain(&self.embedders)
                    .chain(&self.metrics)
                    .collect();
                let status = if models.is_empty() { "degraded" } else { "ok" };
                Ok(json!({ "status": status, "loaded_models": models }))
            }
            other => Err(TransportError::status(404, format!("no route {other}"))),
        }
    }
}

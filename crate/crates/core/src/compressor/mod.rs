//! Dialog-history representations: full history, Recent-k, Semantic-k,
//! summarized history, and summarized history plus summarized background.

pub(crate) mod similarity;
mod summarize;

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::client::scorer::ScorerClient;
use crate::client::ClientError;
use crate::corpus::{BackgroundInfo, Instance, Utterance};
use crate::tokenize::{Tokenizer, WhitespaceTokenizer};

pub use similarity::{
    average_similarity, cosine, hash_embedding, score_history, semantic_k, ApiEmbedder, CachedEmbedder,
    Embedder, HashEmbedder, ServiceEmbedder, SimilarityScore, HASH_EMBEDDING_DIM,
};
pub use summarize::{
    summarize_background, summarize_history, BackgroundSummary, Summarizer, SummarizerRegistry,
    BUILTIN_SUMMARIZERS,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CompressError {
    #[error("k must be at least 1")]
    InvalidK,
    #[error("embedder {0} returned an all-zero vector")]
    ZeroVector(String),
    #[error("no embedders configured")]
    NoEmbedders,
    #[error("unknown summarizer {0}")]
    UnknownSummarizer(String),
    #[error("summarizer service unavailable: {0}")]
    ServiceUnavailable(String),
    #[error("precondition violated: {0}")]
    PreconditionViolation(String),
    #[error("provider error: {0}")]
    Provider(ClientError),
    #[error("bad history representation {0:?}")]
    BadRepresentation(String),
}

/// How the dialog history is presented to the model.
///
/// Parses from and prints as `full`, `recent:K`, `semantic:K`,
/// `summary:ID` and `summary+bi:ID,BI_ID`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum HistoryRepresentation {
    Full,
    RecentK(usize),
    SemanticK(usize),
    Summary(String),
    SummaryPlusBi { summarizer: String, bi_summarizer: String },
}

/// Representation family, ignoring k and summarizer ids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HistoryClass {
    Full,
    Recent,
    Semantic,
    Summary,
}

impl HistoryRepresentation {
    pub fn class(&self) -> HistoryClass {
        match self {
            HistoryRepresentation::Full => HistoryClass::Full,
            HistoryRepresentation::RecentK(_) => HistoryClass::Recent,
            HistoryRepresentation::SemanticK(_) => HistoryClass::Semantic,
            HistoryRepresentation::Summary(_) | HistoryRepresentation::SummaryPlusBi { .. } => {
                HistoryClass::Summary
            }
        }
    }

    pub fn k(&self) -> Option<usize> {
        match self {
            HistoryRepresentation::RecentK(k) | HistoryRepresentation::SemanticK(k) => Some(*k),
            _ => None,
        }
    }

    pub fn uses_bi_summary(&self) -> bool {
        matches!(self, HistoryRepresentation::SummaryPlusBi { .. })
    }

    /// Human-readable label for reports, e.g. `Recent-2`, `pegasus-ds + BI`.
    pub fn label(&self) -> String {
        match self {
            HistoryRepresentation::Full => "Full".into(),
            HistoryRepresentation::RecentK(k) => format!("Recent-{k}"),
            HistoryRepresentation::SemanticK(k) => format!("Semantic-{k}"),
            HistoryRepresentation::Summary(id) => id.clone(),
            HistoryRepresentation::SummaryPlusBi { summarizer, .. } => format!("{summarizer} + BI"),
        }
    }
}

impl fmt::Display for HistoryRepresentation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HistoryRepresentation::Full => write!(f, "full"),
            HistoryRepresentation::RecentK(k) => write!(f, "recent:{k}"),
            HistoryRepresentation::SemanticK(k) => write!(f, "semantic:{k}"),
            HistoryRepresentation::Summary(id) => write!(f, "summary:{id}"),
            HistoryRepresentation::SummaryPlusBi {
                summarizer,
                bi_summarizer,
            } => write!(f, "summary+bi:{summarizer},{bi_summarizer}"),
        }
    }
}

impl FromStr for HistoryRepresentation {
    type Err = CompressError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || CompressError::BadRepresentation(s.to_string());
        let (head, arg) = match s.split_once(':') {
            Some((h, a)) => (h.trim(), Some(a.trim())),
            None => (s.trim(), None),
        };
        let k = |a: Option<&str>| -> Result<usize, CompressError> {
            match a.and_then(|a| a.parse::<usize>().ok()) {
                Some(0) => Err(CompressError::InvalidK),
                Some(k) => Ok(k),
                None => Err(bad()),
            }
        };
        match head.to_ascii_lowercase().as_str() {
            "full" if arg.is_none() => Ok(HistoryRepresentation::Full),
            "recent" => Ok(HistoryRepresentation::RecentK(k(arg)?)),
            "semantic" => Ok(HistoryRepresentation::SemanticK(k(arg)?)),
            "summary" => match arg {
                Some(id) if !id.is_empty() => Ok(HistoryRepresentation::Summary(id.to_string())),
                _ => Err(bad()),
            },
            "summary+bi" => match arg.and_then(|a| a.split_once(',')) {
                Some((a, b)) if !a.trim().is_empty() && !b.trim().is_empty() => {
                    Ok(HistoryRepresentation::SummaryPlusBi {
                        summarizer: a.trim().to_string(),
                        bi_summarizer: b.trim().to_string(),
                    })
                }
                _ => Err(bad()),
            },
            _ => Err(bad()),
        }
    }
}

impl Serialize for HistoryRepresentation {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for HistoryRepresentation {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// The last `min(k, len)` utterances, in order.
pub fn recent_k(history: &[Utterance], k: usize) -> Vec<Utterance> {
    history[history.len().saturating_sub(k)..].to_vec()
}

/// `Person1: ...` lines joined by newlines.
pub fn render_utterances(utterances: &[Utterance]) -> String {
    utterances
        .iter()
        .map(Utterance::labeled)
        .collect::<Vec<_>>()
        .join("\n")
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompressedContext {
    pub kind: HistoryRepresentation,
    /// Populated for the selection variants (full, recent, semantic).
    pub selected: Vec<Utterance>,
    /// Populated for the summary variants.
    pub summary_text: Option<String>,
    pub bi_summary: Option<BackgroundSummary>,
    pub source_length_tokens: usize,
    pub compressed_length_tokens: usize,
}

impl CompressedContext {
    /// Text that fills the history slot of a prompt.
    pub fn history_text(&self) -> String {
        match &self.summary_text {
            Some(s) => s.clone(),
            None => render_utterances(&self.selected),
        }
    }

    pub fn bi_summary_text(&self) -> Option<String> {
        self.bi_summary.as_ref().map(ToString::to_string)
    }
}

/// Builds [`CompressedContext`]s for instances. Summaries are memoized per
/// (summarizer, history).
pub struct Compressor {
    embedders: Vec<Arc<dyn Embedder>>,
    summarizer: Arc<dyn Summarizer>,
    registry: SummarizerRegistry,
    tokenizer: Arc<dyn Tokenizer>,
    summaries: Mutex<HashMap<(String, String), String>>,
}

impl Compressor {
    pub fn new(embedders: Vec<Arc<dyn Embedder>>, summarizer: Arc<dyn Summarizer>) -> Self {
        Compressor {
            embedders,
            summarizer,
            registry: SummarizerRegistry::default(),
            tokenizer: Arc::new(WhitespaceTokenizer),
            summaries: Mutex::new(HashMap::new()),
        }
    }

    /// Two salted hash embedders and the echo summarizer; needs no network.
    pub fn offline() -> Self {
        let embedders: Vec<Arc<dyn Embedder>> = vec![
            Arc::new(CachedEmbedder::new(Arc::new(HashEmbedder::salted("simcse-hash", "simcse")), 64)),
            Arc::new(CachedEmbedder::new(Arc::new(HashEmbedder::salted("st-hash", "st")), 64)),
        ];
        Compressor::new(embedders, Arc::new(ScorerClient::offline()))
    }

    pub fn with_tokenizer(mut self, tokenizer: Arc<dyn Tokenizer>) -> Self {
        self.tokenizer = tokenizer;
        self
    }

    pub fn with_registry(mut self, registry: SummarizerRegistry) -> Self {
        self.registry = registry;
        self
    }

    pub fn embedders(&self) -> &[Arc<dyn Embedder>] {
        &self.embedders
    }

    pub fn registry(&self) -> &SummarizerRegistry {
        &self.registry
    }

    fn summary(&self, history: &[Utterance], id: &str) -> Result<String, CompressError> {
        let key = (id.to_string(), render_utterances(history));
        if let Some(s) = self.summaries.lock().unwrap().get(&key) {
            return Ok(s.clone());
        }
        let s = summarize_history(history, id, &self.registry, self.summarizer.as_ref())?;
        self.summaries.lock().unwrap().insert(key, s.clone());
        Ok(s)
    }

    pub fn compress(
        &self,
        history: &[Utterance],
        current: &Utterance,
        background: Option<&BackgroundInfo>,
        rep: &HistoryRepresentation,
    ) -> Result<CompressedContext, CompressError> {
        let source_length_tokens = self.tokenizer.count(&render_utterances(history));
        let mut ctx = CompressedContext {
            kind: rep.clone(),
            selected: Vec::new(),
            summary_text: None,
            bi_summary: None,
            source_length_tokens,
            compressed_length_tokens: 0,
        };
        match rep {
            HistoryRepresentation::Full => ctx.selected = history.to_vec(),
            HistoryRepresentation::RecentK(k) => {
                if *k == 0 {
                    return Err(CompressError::InvalidK);
                }
                ctx.selected = recent_k(history, *k);
            }
            HistoryRepresentation::SemanticK(k) => {
                ctx.selected = semantic_k(history, current, *k, &self.embedders)?;
            }
            HistoryRepresentation::Summary(id) => {
                self.registry.check(id)?;
                ctx.summary_text = Some(if history.is_empty() {
                    String::new()
                } else {
                    self.summary(history, id)?
                });
            }
            HistoryRepresentation::SummaryPlusBi {
                summarizer,
                bi_summarizer,
            } => {
                self.registry.check(summarizer)?;
                ctx.summary_text = Some(if history.is_empty() {
                    String::new()
                } else {
                    self.summary(history, summarizer)?
                });
                if let Some(bi) = background {
                    ctx.bi_summary = Some(summarize_background(
                        bi,
                        bi_summarizer,
                        &self.registry,
                        self.summarizer.as_ref(),
                    )?);
                }
            }
        }
        ctx.compressed_length_tokens = self.tokenizer.count(&ctx.history_text());
        Ok(ctx)
    }

    pub fn compress_instance(
        &self,
        instance: &Instance,
        rep: &HistoryRepresentation,
    ) -> Result<CompressedContext, CompressError> {
        self.compress(&instance.history, &instance.current, instance.background.as_ref(), rep)
    }
}

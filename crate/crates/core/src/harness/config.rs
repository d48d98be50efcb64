use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::client::stub::{StubCompletion, StubLlm, StubLogprobs};
use crate::client::scorer::{ScorerClient, StubScorer};
use crate::client::{ApiStyle, DiskCache, EndpointConfig, HttpTransport, LlmClient, RetryPolicy, Transport};
use crate::compressor::{
    ApiEmbedder, CachedEmbedder, Compressor, Embedder, HashEmbedder, HistoryRepresentation, ServiceEmbedder,
};
use crate::corpus::{
    build_corpus_instances, read_conversations, BackgroundInfo, BackgroundKind, Conversation, DatasetKind, Instance,
    Utterance,
};
use crate::metrics::MetricId;
use crate::prompt::{
    builtin_catalog, load_templates_file, manual_template, PromptTemplate, ShotMode, SUPPORTED_K,
};
use crate::client::DecodingParams;
use crate::tokenize::DEFAULT_TOKENIZER;

use super::HarnessError;

/// How the prompt template for a matrix cell is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TemplateType {
    /// The hand-written template for the cell's shot mode and context.
    Manual,
    /// A perplexity-selected template (`ppl-*` id) from the catalog.
    Perplexity,
}

impl TemplateType {
    pub fn label(self) -> &'static str {
        match self {
            TemplateType::Manual => "manual",
            TemplateType::Perplexity => "perplexity",
        }
    }
}

/// One cell of the evaluation matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub endpoint: String,
    pub template_id: String,
    pub template_type: TemplateType,
    pub shot: ShotMode,
    pub representation: HistoryRepresentation,
    /// Background kind included in the prompt, if any.
    pub background: Option<BackgroundKind>,
    pub tokenizer: String,
    pub seed: u64,
    pub split: String,
    pub limit: usize,
}

impl RunConfig {
    pub fn id(&self) -> String {
        format!("{}|{}|{}", self.endpoint, self.template_id, self.representation)
    }

    /// Report label for the history signal, e.g. `Recent-2` or `Full + BI`.
    pub fn history_signal(&self) -> String {
        let label = self.representation.label();
        if self.background.is_some() && !self.representation.uses_bi_summary() {
            format!("{label} + BI")
        } else {
            label
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::ConfigInvalid(format!("{}: {m}", self.id())));
        if self.limit == 0 {
            return bad("instance limit must be at least 1".into());
        }
        if let Some(k) = self.representation.k() {
            if !SUPPORTED_K.contains(&k) {
                return bad(format!("k = {k} is not one of {SUPPORTED_K:?}"));
            }
        }
        if self.representation.uses_bi_summary() && self.background.is_none() {
            return bad("summary+bi needs background information".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EndpointKind {
    /// In-process deterministic endpoint.
    #[default]
    Stub,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EndpointSpec {
    pub id: String,
    #[serde(default)]
    pub kind: EndpointKind,
    #[serde(default)]
    pub base_url: String,
    #[serde(default)]
    pub model_id: Option<String>,
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default = "default_parallel")]
    pub max_parallel: usize,
    #[serde(default)]
    pub logprobs: bool,
    #[serde(default)]
    pub chat: bool,
    #[serde(default = "default_timeout")]
    pub timeout_ms: u64,
    #[serde(default)]
    pub retry: Option<RetryPolicy>,
    /// Stub completion: `echo-first:N`, `echo-last:N` or `fixed:TEXT`.
    #[serde(default)]
    pub stub_completion: Option<String>,
    /// Stub per-token log-probability.
    #[serde(default)]
    pub stub_logprob: Option<f64>,
}

fn default_parallel() -> usize {
    4
}

fn default_timeout() -> u64 {
    60_000
}

fn parse_stub_completion(s: &str) -> Result<StubCompletion, HarnessError> {
    let bad = || HarnessError::ConfigInvalid(format!("bad stub_completion {s:?}"));
    let (head, arg) = s.split_once(':').ok_or_else(bad)?;
    match head {
        "echo-first" => Ok(StubCompletion::EchoFirst(arg.parse().map_err(|_| bad())?)),
        "echo-last" => Ok(StubCompletion::EchoLast(arg.parse().map_err(|_| bad())?)),
        "fixed" => Ok(StubCompletion::Fixed(arg.to_string())),
        _ => Err(bad()),
    }
}

impl EndpointSpec {
    pub fn stub(id: impl Into<String>) -> Self {
        EndpointSpec {
            id: id.into(),
            kind: EndpointKind::Stub,
            base_url: String::new(),
            model_id: None,
            api_key_env: None,
            max_parallel: default_parallel(),
            logprobs: true,
            chat: false,
            timeout_ms: default_timeout(),
            retry: None,
            stub_completion: None,
            stub_logprob: None,
        }
    }

    pub fn endpoint_config(&self) -> EndpointConfig {
        let base = match self.kind {
            EndpointKind::Stub => "stub://",
            EndpointKind::Http => self.base_url.as_str(),
        };
        let mut cfg = EndpointConfig::new(base, self.model_id.clone().unwrap_or_else(|| self.id.clone()));
        cfg.api_key_env = self.api_key_env.clone();
        cfg.max_parallel = self.max_parallel.max(1);
        cfg.logprobs = self.logprobs;
        cfg.timeout_ms = self.timeout_ms;
        cfg.api = if self.chat { ApiStyle::Chat } else { ApiStyle::Completions };
        if let Some(r) = &self.retry {
            cfg.retry = r.clone();
        }
        cfg
    }

    pub fn transport(&self) -> Result<Arc<dyn Transport>, HarnessError> {
        Ok(match self.kind {
            EndpointKind::Stub => {
                let completion = match &self.stub_completion {
                    Some(s) => parse_stub_completion(s)?,
                    None => StubCompletion::EchoLast(8),
                };
                let lp = StubLogprobs::Constant(self.stub_logprob.unwrap_or(-1.0));
                Arc::new(StubLlm::new(completion).with_logprobs(lp))
            }
            EndpointKind::Http => {
                if self.base_url.is_empty() {
                    return Err(HarnessError::ConfigInvalid(format!("endpoint {} has no base_url", self.id)));
                }
                Arc::new(HttpTransport::from_endpoint(&self.endpoint_config()))
            }
        })
    }

    /// A client with an on-disk response cache under `cache_root`, if given.
    pub fn client(&self, cache_root: Option<&Path>) -> Result<LlmClient, HarnessError> {
        let mut client = LlmClient::new(self.endpoint_config(), self.transport()?);
        if let Some(root) = cache_root {
            let cache = DiskCache::open(root.join(&self.id)).map_err(|e| HarnessError::Io(e.to_string()))?;
            client = client.with_cache(Arc::new(cache));
        }
        Ok(client)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScorerSpec {
    #[serde(default)]
    pub kind: EndpointKind,
    #[serde(default)]
    pub base_url: String,
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_ms: u64,
}

impl ScorerSpec {
    pub fn client(&self) -> Result<ScorerClient, HarnessError> {
        match self.kind {
            EndpointKind::Stub => Ok(ScorerClient::new(Arc::new(StubScorer::default()))),
            EndpointKind::Http => {
                if self.base_url.is_empty() {
                    return Err(HarnessError::ConfigInvalid("scorer has no base_url".into()));
                }
                let key = self.api_key_env.as_ref().and_then(|v| std::env::var(v).ok());
                Ok(ScorerClient::new(Arc::new(HttpTransport::new(
                    self.base_url.clone(),
                    key,
                    Duration::from_millis(self.timeout_ms),
                ))))
            }
        }
    }
}

/// A deterministic synthetic corpus: `conversations` dialogs of `turns`
/// utterances each, words drawn from a small vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub conversations: usize,
    pub turns: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub persona: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSpec {
    /// Split name to file, e.g. `test = "data/msc_test.jsonl"`.
    #[serde(default)]
    pub splits: BTreeMap<String, PathBuf>,
    #[serde(default)]
    pub synthetic: Option<SyntheticSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixSpec {
    #[serde(default)]
    pub endpoints: Vec<String>,
    pub representations: Vec<HistoryRepresentation>,
    pub shots: Vec<ShotMode>,
    #[serde(default = "default_template_types")]
    pub template_types: Vec<TemplateType>,
    #[serde(default)]
    pub background: bool,
}

fn default_template_types() -> Vec<TemplateType> {
    vec![TemplateType::Manual]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsSpec {
    #[serde(default = "default_metrics")]
    pub ids: Vec<MetricId>,
    #[serde(default = "default_a_values")]
    pub a_values: Vec<f64>,
}

impl Default for MetricsSpec {
    fn default() -> Self {
        MetricsSpec {
            ids: default_metrics(),
            a_values: default_a_values(),
        }
    }
}

fn default_metrics() -> Vec<MetricId> {
    vec![MetricId::Meteor]
}

pub fn default_a_values() -> Vec<f64> {
    vec![0.5, 1.0, 2.0, 5.0, 10.0]
}

/// History embedders for Semantic-k: `hash:SALT`, `service:MODEL` or
/// `endpoint:ID`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompressorSpec {
    #[serde(default = "default_embedders")]
    pub embedders: Vec<String>,
}

impl Default for CompressorSpec {
    fn default() -> Self {
        CompressorSpec {
            embedders: default_embedders(),
        }
    }
}

fn default_embedders() -> Vec<String> {
    vec!["hash:simcse".into(), "hash:st".into()]
}

/// A run file (TOML).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunFile {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_tokenizer")]
    pub tokenizer: String,
    #[serde(default = "default_split")]
    pub split: String,
    #[serde(default = "default_limit")]
    pub limit: usize,
    #[serde(default)]
    pub store: Option<PathBuf>,
    /// Extra template catalog (JSONL) searched for perplexity templates.
    #[serde(default)]
    pub catalog: Option<PathBuf>,
    pub corpus: CorpusSpec,
    #[serde(default)]
    pub endpoints: Vec<EndpointSpec>,
    #[serde(default)]
    pub scorer: ScorerSpec,
    #[serde(default)]
    pub compressor: CompressorSpec,
    pub matrix: MatrixSpec,
    #[serde(default)]
    pub metrics: MetricsSpec,
    #[serde(default)]
    pub decoding: DecodingParams,
}

fn default_tokenizer() -> String {
    DEFAULT_TOKENIZER.into()
}

fn default_split() -> String {
    "test".into()
}

fn default_limit() -> usize {
    usize::MAX
}

impl RunFile {
    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        let mut rf: RunFile = toml::from_str(text).map_err(|e| HarnessError::ConfigInvalid(e.to_string()))?;
        if rf.endpoints.is_empty() {
            rf.endpoints.push(EndpointSpec::stub("stub"));
        }
        if rf.matrix.endpoints.is_empty() {
            rf.matrix.endpoints = rf.endpoints.iter().map(|e| e.id.clone()).collect();
        }
        Ok(rf)
    }

    /// Reads a run file; relative paths inside it resolve against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, HarnessError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
        let mut rf = RunFile::parse(&text)?;
        let dir = path.parent().unwrap_or(Path::new("."));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        };
        rf.corpus.splits.values_mut().for_each(fix);
        rf.store.as_mut().map(fix);
        rf.catalog.as_mut().map(fix);
        Ok(rf)
    }

    pub fn endpoint(&self, id: &str) -> Result<&EndpointSpec, HarnessError> {
        self.endpoints
            .iter()
            .find(|e| e.id == id)
            .ok_or_else(|| HarnessError::ConfigInvalid(format!("unknown endpoint {id}")))
    }

    /// Built-in templates plus the run's extra catalog.
    pub fn templates(&self) -> Result<Vec<PromptTemplate>, HarnessError> {
        let mut all = builtin_catalog();
        if let Some(p) = &self.catalog {
            all.extend(load_templates_file(p)?);
        }
        Ok(all)
    }

    pub fn conversations(&self) -> Result<Vec<Conversation>, HarnessError> {
        if let Some(path) = self.corpus.splits.get(&self.split) {
            return read_conversations(path).map_err(HarnessError::from);
        }
        match &self.corpus.synthetic {
            Some(s) => Ok(synthetic_conversations(s)),
            None => Err(HarnessError::ConfigInvalid(format!("no corpus for split {}", self.split))),
        }
    }

    /// The first `limit` instances of the configured split.
    pub fn instances(&self) -> Result<Vec<Instance>, HarnessError> {
        let convs = self.conversations()?;
        let mut inst = build_corpus_instances(&convs)?;
        inst.truncate(self.limit);
        Ok(inst)
    }

    /// The run matrix: endpoints × template types × shots × representations.
    /// `background_kind` is the kind found in the corpus.
    pub fn expand(&self, background_kind: Option<BackgroundKind>) -> Result<Vec<RunConfig>, HarnessError> {
        let templates = self.templates()?;
        let mut out = Vec::new();
        for endpoint in &self.matrix.endpoints {
            self.endpoint(endpoint)?;
            for &tt in &self.matrix.template_types {
                for &shot in &self.matrix.shots {
                    for rep in &self.matrix.representations {
                        let background = if self.matrix.background || rep.uses_bi_summary() {
                            Some(background_kind.ok_or_else(|| {
                                HarnessError::ConfigInvalid("background requested but corpus has none".into())
                            })?)
                        } else {
                            None
                        };
                        let template = match tt {
                            TemplateType::Manual => Some(manual_template(shot, Some(rep), background)),
                            TemplateType::Perplexity => templates
                                .iter()
                                .find(|t| {
                                    t.id.starts_with("ppl-")
                                        && t.shot == shot
                                        && t.context.history == Some(rep.class())
                                        && t.context.background == background
                                })
                                .cloned(),
                        };
                        let Some(template) = template else {
                            log::warn!("no {} template for {shot} {rep}; cell skipped", tt.label());
                            continue;
                        };
                        let cfg = RunConfig {
                            endpoint: endpoint.clone(),
                            template_id: template.id.clone(),
                            template_type: tt,
                            shot,
                            representation: rep.clone(),
                            background,
                            tokenizer: self.tokenizer.clone(),
                            seed: self.seed,
                            split: self.split.clone(),
                            limit: self.limit,
                        };
                        cfg.validate()?;
                        out.push(cfg);
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn compressor(&self, scorer: &ScorerClient, cache_root: Option<&Path>) -> Result<Compressor, HarnessError> {
        let mut embedders: Vec<Arc<dyn Embedder>> = Vec::new();
        for spec in &self.compressor.embedders {
            let (kind, arg) = spec
                .split_once(':')
                .ok_or_else(|| HarnessError::ConfigInvalid(format!("bad embedder {spec:?}")))?;
            let inner: Arc<dyn Embedder> = match kind {
                "hash" => Arc::new(HashEmbedder::salted(format!("hash-{arg}"), arg)),
                "service" => Arc::new(ServiceEmbedder::new(scorer.clone(), arg)),
                "endpoint" => Arc::new(ApiEmbedder::new(Arc::new(self.endpoint(arg)?.client(cache_root)?))),
                _ => return Err(HarnessError::ConfigInvalid(format!("bad embedder {spec:?}"))),
            };
            embedders.push(Arc::new(CachedEmbedder::new(inner, 64)));
        }
        Ok(Compressor::new(embedders, Arc::new(scorer.clone())))
    }
}

const VOCAB: [&str; 40] = [
    "i", "you", "we", "like", "love", "the", "a", "dog", "cat", "park", "coffee", "work", "weekend", "music", "book",
    "movie", "garden", "beach", "rain", "sun", "today", "tomorrow", "really", "maybe", "always", "never", "went",
    "saw", "made", "cooked", "play", "guitar", "run", "city", "trip", "friend", "family", "dinner", "game", "school",
];

/// Deterministic synthetic dialogs for dry runs and tests.
pub fn synthetic_conversations(spec: &SyntheticSpec) -> Vec<Conversation> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    (0..spec.conversations)
        .map(|c| {
            let texts: Vec<String> = (0..spec.turns)
                .map(|_| {
                    let n = 4 + (rand::Rng::gen_range(&mut rng, 0..8));
                    let words: Vec<&str> = (0..n).map(|_| *VOCAB.choose(&mut rng).unwrap()).collect();
                    let mut s = words.join(" ");
                    s.push('.');
                    crate::corpus::normalize_utterance(&s)
                })
                .collect();
            let mut conv = Conversation::from_texts(format!("syn-{c:03}"), DatasetKind::Generic, &texts);
            if spec.persona {
                let p = |rng: &mut ChaCha8Rng| {
                    format!("I like {}.", VOCAB[8..].choose(rng).unwrap())
                };
                let (p1, p2) = (p(&mut rng), p(&mut rng));
                conv = conv.with_background(BackgroundInfo::persona(p1, p2));
            }
            conv
        })
        .collect()
}

/// The kind of the first background found in `convs`.
pub fn corpus_background_kind(convs: &[Conversation]) -> Option<BackgroundKind> {
    convs.iter().find_map(|c| c.background.as_ref().map(|b| b.kind))
}

/// Utterance helper for chat transcripts.
pub(crate) fn utterance(speaker: crate::corpus::Speaker, text: &str, index: usize) -> Utterance {
    Utterance {
        speaker,
        text: text.to_string(),
        index,
        session: None,
    }
}

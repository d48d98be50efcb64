//! Perplexity-based template selection.
//!
//! Each candidate is rendered for a set of validation instances without the
//! target response, the whole prompt is scored for token log-probabilities,
//! and the candidate with the lowest mean perplexity wins.

use std::io::{BufRead, Write};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::client::{ClientError, LogprobModel, TokenLogprob};
use crate::compressor::{Compressor, HistoryRepresentation};
use crate::corpus::Instance;
use crate::prompt::{render_prompt, select_exemplar, ExemplarPool, PromptError, PromptTemplate, ShotMode};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimizerError {
    #[error("model {0} does not expose token log-probabilities")]
    LogprobsUnsupported(String),
    #[error("provider error: {0}")]
    Provider(ClientError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("no instances to score")]
    NoInstances,
    #[error("candidate set is empty")]
    NoCandidates,
    #[error("candidate {id} does not match base {base}: {reason}")]
    IncompatibleCandidate { id: String, base: String, reason: String },
    #[error("prompt produced no scored tokens")]
    NoScoredTokens,
    #[error("io error: {0}")]
    Io(String),
}

impl From<ClientError> for OptimizerError {
    fn from(e: ClientError) -> Self {
        match e {
            ClientError::LogprobsUnsupported(m) => OptimizerError::LogprobsUnsupported(m),
            other => OptimizerError::Provider(other),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Manual,
    Paraphrase,
    BackTranslation,
}

/// A base template and its variants; all share its shot mode and context.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    pub base_template_id: String,
    pub candidates: Vec<PromptTemplate>,
    pub provenance: Vec<Provenance>,
}

impl CandidateSet {
    pub fn new(base: PromptTemplate) -> Self {
        CandidateSet {
            base_template_id: base.id.clone(),
            candidates: vec![base],
            provenance: vec![Provenance::Manual],
        }
    }

    pub fn push(&mut self, template: PromptTemplate, provenance: Provenance) -> Result<(), OptimizerError> {
        let base = &self.candidates[0];
        let reason = if template.shot != base.shot {
            Some("shot mode differs")
        } else if template.context != base.context {
            Some("context differs")
        } else {
            None
        };
        if let Some(reason) = reason {
            return Err(OptimizerError::IncompatibleCandidate {
                id: template.id,
                base: self.base_template_id.clone(),
                reason: reason.into(),
            });
        }
        template.validate()?;
        self.candidates.push(template);
        self.provenance.push(provenance);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }
}

/// Source of template variants for a base template.
pub trait ParaphraseProvider {
    fn variants(&self, base: &PromptTemplate) -> Result<Vec<(PromptTemplate, Provenance)>, OptimizerError>;
}

/// Pre-authored variants: one JSON template per line with two extra
/// fields, `base` (the base template id) and `provenance`.
#[derive(Debug, Clone, Default)]
pub struct FileParaphraseProvider {
    records: Vec<VariantRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct VariantRecord {
    base: String,
    provenance: Provenance,
    #[serde(flatten)]
    template: PromptTemplate,
}

impl FileParaphraseProvider {
    pub fn from_reader<R: BufRead>(reader: R) -> Result<Self, OptimizerError> {
        let mut records = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| OptimizerError::Io(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: VariantRecord = serde_json::from_str(&line)
                .map_err(|e| PromptError::Parse(format!("line {}: {e}", i + 1)))?;
            rec.template.validate()?;
            records.push(rec);
        }
        Ok(FileParaphraseProvider { records })
    }

    pub fn open(path: impl AsRef<std::path::Path>) -> Result<Self, OptimizerError> {
        let f = std::fs::File::open(path.as_ref())
            .map_err(|e| OptimizerError::Io(format!("{}: {e}", path.as_ref().display())))?;
        Self::from_reader(std::io::BufReader::new(f))
    }
}

impl ParaphraseProvider for FileParaphraseProvider {
    fn variants(&self, base: &PromptTemplate) -> Result<Vec<(PromptTemplate, Provenance)>, OptimizerError> {
        Ok(self
            .records
            .iter()
            .filter(|r| r.base == base.id)
            .map(|r| (r.template.clone(), r.provenance))
            .collect())
    }
}

/// The base template plus every variant the provider knows for it.
pub fn build_candidate_set(
    base: PromptTemplate,
    provider: &dyn ParaphraseProvider,
) -> Result<CandidateSet, OptimizerError> {
    let variants = provider.variants(&base)?;
    let mut set = CandidateSet::new(base);
    for (t, p) in variants {
        set.push(t, p)?;
    }
    Ok(set)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    /// Perplexity per instance, then the arithmetic mean over instances.
    #[default]
    Instance,
    /// One perplexity over all scored tokens of all instances.
    Token,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateScore {
    pub template_id: String,
    pub mean_perplexity: f64,
    pub n_instances: usize,
}

/// exp(−mean log-probability) over tokens that carry one. The first token
/// of an echoed prompt has no log-probability and is skipped.
pub fn perplexity(logprobs: &[TokenLogprob]) -> Option<f64> {
    let (sum, n) = sum_logprobs(logprobs);
    (n > 0).then(|| (-sum / n as f64).exp())
}

fn sum_logprobs(logprobs: &[TokenLogprob]) -> (f64, usize) {
    logprobs
        .iter()
        .filter_map(|t| t.logprob)
        .fold((0.0, 0), |(s, n), lp| (s + lp, n + 1))
}

/// Everything besides the template that scoring needs.
pub struct ScoringSetup<'a> {
    pub compressor: &'a Compressor,
    /// Random-exemplar pool for few-shot candidates.
    pub pool: &'a ExemplarPool,
    pub seed: u64,
    pub pooling: Pooling,
    /// Worker threads issuing scoring requests.
    pub parallel: usize,
}

impl<'a> ScoringSetup<'a> {
    pub fn new(compressor: &'a Compressor, pool: &'a ExemplarPool) -> Self {
        ScoringSetup {
            compressor,
            pool,
            seed: 0,
            pooling: Pooling::Instance,
            parallel: 1,
        }
    }
}

/// The prompt scored for one instance: the rendered input up to the
/// generation cue, without the target response.
pub fn scoring_text(
    template: &PromptTemplate,
    instance: &Instance,
    rep: &HistoryRepresentation,
    setup: &ScoringSetup<'_>,
) -> Result<String, OptimizerError> {
    let ctx = setup
        .compressor
        .compress_instance(instance, rep)
        .map_err(PromptError::from)?;
    let exemplar = match template.shot {
        ShotMode::FewShot => Some(select_exemplar(instance, setup.pool, rep, setup.compressor, setup.seed)?),
        ShotMode::ZeroShot => None,
    };
    Ok(render_prompt(template, instance, &ctx, exemplar.as_ref())?.text)
}

fn map_parallel<T: Sync, R: Send>(
    items: &[T],
    workers: usize,
    f: impl Fn(&T) -> Result<R, OptimizerError> + Sync,
) -> Result<Vec<R>, OptimizerError> {
    let next = AtomicUsize::new(0);
    let out: Mutex<Vec<Option<Result<R, OptimizerError>>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..workers.clamp(1, items.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                out.lock().unwrap()[i] = Some(r);
            });
        }
    });
    out.into_inner().unwrap().into_iter().map(|r| r.expect("every item scored")).collect()
}

pub fn score_template(
    template: &PromptTemplate,
    instances: &[Instance],
    rep: &HistoryRepresentation,
    llm: &dyn LogprobModel,
    setup: &ScoringSetup<'_>,
) -> Result<TemplateScore, OptimizerError> {
    if instances.is_empty() {
        return Err(OptimizerError::NoInstances);
    }
    let sums = map_parallel(instances, setup.parallel, |inst| {
        let text = scoring_text(template, inst, rep, setup)?;
        let (sum, n) = sum_logprobs(&llm.token_logprobs(&text)?);
        if n == 0 {
            return Err(OptimizerError::NoScoredTokens);
        }
        Ok((sum, n))
    })?;
    let mean_perplexity = match setup.pooling {
        Pooling::Instance => {
            sums.iter().map(|(s, n)| (-s / *n as f64).exp()).sum::<f64>() / sums.len() as f64
        }
        Pooling::Token => {
            let (s, n) = sums.iter().fold((0.0, 0), |(a, b), (s, n)| (a + s, b + n));
            (-s / n as f64).exp()
        }
    };
    Ok(TemplateScore {
        template_id: template.id.clone(),
        mean_perplexity,
        n_instances: instances.len(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub best: PromptTemplate,
    pub provenance: Provenance,
    /// One row per candidate, in candidate order.
    pub scores: Vec<TemplateScore>,
}

/// Index of the lowest score; the first one wins ties.
pub fn argmin_first(scores: &[TemplateScore]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, s) in scores.iter().enumerate() {
        if best.is_none_or(|b| s.mean_perplexity < scores[b].mean_perplexity) {
            best = Some(i);
        }
    }
    best
}

pub fn select_best(
    candidates: &CandidateSet,
    instances: &[Instance],
    rep: &HistoryRepresentation,
    llm: &dyn LogprobModel,
    setup: &ScoringSetup<'_>,
) -> Result<Selection, OptimizerError> {
    if candidates.is_empty() {
        return Err(OptimizerError::NoCandidates);
    }
    let scores = candidates
        .candidates
        .iter()
        .map(|t| score_template(t, instances, rep, llm, setup))
        .collect::<Result<Vec<_>, _>>()?;
    let i = argmin_first(&scores).expect("non-empty");
    log::info!(
        "selected {} (perplexity {:.4}) among {} candidates",
        scores[i].template_id,
        scores[i].mean_perplexity,
        scores.len()
    );
    Ok(Selection {
        best: candidates.candidates[i].clone(),
        provenance: candidates.provenance[i],
        scores,
    })
}

pub fn write_score_table<W: Write>(w: W, scores: &[TemplateScore]) -> Result<(), OptimizerError> {
    let mut out = csv::Writer::from_writer(w);
    for s in scores {
        out.serialize(s).map_err(|e| OptimizerError::Io(e.to_string()))?;
    }
    out.flush().map_err(|e| OptimizerError::Io(e.to_string()))
}

pub fn read_score_table<R: std::io::Read>(r: R) -> Result<Vec<TemplateScore>, OptimizerError> {
    csv::Reader::from_reader(r)
        .deserialize()
        .collect::<Result<Vec<TemplateScore>, _>>()
        .map_err(|e| OptimizerError::Io(e.to_string()))
}

/// `n` instances drawn without replacement under `seed`, in corpus order.
pub fn sample_validation(instances: &[Instance], n: usize, seed: u64) -> Vec<Instance> {
    if n >= instances.len() {
        return instances.to_vec();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = sample(&mut rng, instances.len(), n).into_vec();
    idx.sort_unstable();
    idx.into_iter().map(|i| instances[i].clone()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::client::stub::{StubLlm, StubLogprobs};
    use crate::client::{EndpointConfig, LlmClient};
    use crate::corpus::{build_corpus_instances, Conversation, DatasetKind};
    use crate::prompt::{manual_template, perplexity_summary_template, Segment};
    use proptest::prelude::*;
    use std::sync::Arc;

    fn instances() -> Vec<Instance> {
        let convs: Vec<Conversation> = (0..3)
            .map(|c| {
                let texts: Vec<String> = (0..6).map(|i| format!("turn {i} of dialog {c} here")).collect();
                Conversation::from_texts(format!("c{c}"), DatasetKind::Generic, &texts)
            })
            .collect();
        build_corpus_instances(&convs).unwrap()
    }

    fn client(lp: StubLogprobs) -> LlmClient {
        let mut cfg = EndpointConfig::new("stub://", "stub-model");
        cfg.logprobs = true;
        LlmClient::new(cfg, Arc::new(StubLlm::default().with_logprobs(lp)))
    }

    fn rep() -> HistoryRepresentation {
        "summary:pegasus-ds".parse().unwrap()
    }

    #[test]
    fn zero_logprob_is_perplexity_one() {
        let comp = Compressor::offline();
        let pool = ExemplarPool::default();
        let setup = ScoringSetup::new(&comp, &pool);
        let s = score_template(&perplexity_summary_template(), &instances(), &rep(), &client(StubLogprobs::Constant(0.0)), &setup).unwrap();
        assert_eq!(s.mean_perplexity, 1.0);
        assert_eq!(s.n_instances, 9);
    }

    #[test]
    fn uniform_quarter_is_four() {
        let comp = Compressor::offline();
        let pool = ExemplarPool::default();
        let setup = ScoringSetup::new(&comp, &pool);
        let c = client(StubLogprobs::Constant((0.25f64).ln()));
        let s = score_template(&perplexity_summary_template(), &instances(), &rep(), &c, &setup).unwrap();
        assert!((s.mean_perplexity - 4.0).abs() < 1e-12);
    }

    #[test]
    fn null_first_token_is_skipped() {
        let lps = vec![
            TokenLogprob { token: "a".into(), logprob: None },
            TokenLogprob { token: " b".into(), logprob: Some(-1.0) },
            TokenLogprob { token: " c".into(), logprob: Some(-3.0) },
        ];
        assert!((perplexity(&lps).unwrap() - (2.0f64).exp()).abs() < 1e-12);
        assert_eq!(perplexity(&lps[..1]), None);
    }

    #[test]
    fn without_logprobs_support() {
        let comp = Compressor::offline();
        let pool = ExemplarPool::default();
        let setup = ScoringSetup::new(&comp, &pool);
        let c = LlmClient::new(EndpointConfig::new("stub://", "chat-only"), Arc::new(StubLlm::default()));
        let err = score_template(&perplexity_summary_template(), &instances(), &rep(), &c, &setup).unwrap_err();
        assert_eq!(err, OptimizerError::LogprobsUnsupported("chat-only".into()));
    }

    #[test]
    fn incompatible_candidates_are_rejected() {
        let mut set = CandidateSet::new(perplexity_summary_template());
        let fs = manual_template(ShotMode::FewShot, Some(&rep()), None);
        assert!(set.push(fs, Provenance::Paraphrase).is_err());
        let zs = manual_template(ShotMode::ZeroShot, Some(&rep()), None);
        set.push(zs, Provenance::Paraphrase).unwrap();
        assert_eq!(set.len(), 2);
    }

    #[test]
    fn file_provider_matches_base() {
        let mut variant = perplexity_summary_template();
        variant.id = "v1".into();
        variant.segments.insert(0, Segment::lit("Read carefully. "));
        let mut line = serde_json::to_value(&variant).unwrap();
        line["base"] = PPL_BASE.into();
        line["provenance"] = "back_translation".into();
        let other = r#"{"base":"other","provenance":"paraphrase","id":"x","shot":"zs","context":"summary","segments":[{"slot":"S"},{"slot":"U"}]}"#;
        let text = format!("{line}\n{other}\n");
        let provider = FileParaphraseProvider::from_reader(text.as_bytes()).unwrap();
        let set = build_candidate_set(perplexity_summary_template(), &provider).unwrap();
        assert_eq!(set.len(), 2);
        assert_eq!(set.provenance, [Provenance::Manual, Provenance::BackTranslation]);
    }

    const PPL_BASE: &str = crate::prompt::PPL_FLAN_T5_SUMMARY_ZS;

    #[test]
    fn score_table_round_trip() {
        let rows = vec![
            TemplateScore { template_id: "a".into(), mean_perplexity: 5.0, n_instances: 100 },
            TemplateScore { template_id: "b".into(), mean_perplexity: 3.2, n_instances: 100 },
        ];
        let mut buf = Vec::new();
        write_score_table(&mut buf, &rows).unwrap();
        assert!(String::from_utf8(buf.clone()).unwrap().starts_with("template_id,mean_perplexity,n_instances\n"));
        assert_eq!(read_score_table(buf.as_slice()).unwrap(), rows);
        assert_eq!(argmin_first(&rows), Some(1));
    }

    #[test]
    fn validation_sample_is_seeded_and_ordered() {
        let all = instances();
        let a = sample_validation(&all, 4, 11);
        assert_eq!(a, sample_validation(&all, 4, 11));
        assert_eq!(a.len(), 4);
        let pos: Vec<usize> = a.iter().map(|x| all.iter().position(|y| y == x).unwrap()).collect();
        assert!(pos.windows(2).all(|w| w[0] < w[1]));
    }

    proptest! {
        #[test]
        fn ties_go_to_the_first(v in proptest::collection::vec(1u8..4, 1..8)) {
            let rows: Vec<TemplateScore> = v.iter().enumerate()
                .map(|(i, p)| TemplateScore { template_id: i.to_string(), mean_perplexity: *p as f64, n_instances: 1 })
                .collect();
            let i = argmin_first(&rows).unwrap();
            let min = v.iter().min().unwrap();
            prop_assert_eq!(i, v.iter().position(|p| p == min).unwrap());
        }

        #[test]
        fn higher_logprobs_lower_perplexity(base in -5.0f64..-0.1, bump in 0.01f64..0.1) {
            let comp = Compressor::offline();
            let pool = ExemplarPool::default();
            let setup = ScoringSetup::new(&comp, &pool);
            let inst = &instances()[..2];
            let t = perplexity_summary_template();
            let lo = score_template(&t, inst, &rep(), &client(StubLogprobs::Constant(base)), &setup).unwrap();
            let hi = score_template(&t, inst, &rep(), &client(StubLogprobs::Constant(base + bump)), &setup).unwrap();
            prop_assert!(hi.mean_perplexity < lo.mean_perplexity);
        }
    }
}

use std::collections::{BTreeMap, HashSet};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::client::scorer::{ScorePair, ScorerClient};
use crate::client::{DecodingParams, Generator, LlmClient};
use crate::compressor::{render_utterances, Compressor};
use crate::corpus::{Instance, Utterance};
use crate::metrics::{meteor, remote_score, MetricId, PairInput};
use crate::prompt::{render_with, select_exemplar, ExemplarPool, InstanceRef, PromptTemplate, ShotMode};
use crate::tokenize::TokenizerRegistry;

use super::config::{corpus_background_kind, RunConfig, RunFile};
use super::store::{load_records, EvalRecord, Failure, Manifest, ResultStore};
use super::HarnessError;

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

/// Everything a matrix run needs besides configs and instances.
pub struct Engine {
    pub run_id: String,
    pub generators: BTreeMap<String, Arc<dyn Generator>>,
    pub compressor: Arc<Compressor>,
    pub scorer: ScorerClient,
    pub templates: BTreeMap<String, PromptTemplate>,
    pub pool: ExemplarPool,
    pub metrics: Vec<MetricId>,
    /// Exponents recorded in the manifest for later UID reports.
    pub a_values: Vec<f64>,
    pub tokenizers: TokenizerRegistry,
    pub decoding: DecodingParams,
    pub workers: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run_id: String,
    pub planned: usize,
    pub skipped_existing: usize,
    pub written: usize,
    pub tombstones: usize,
    pub network_calls: u64,
    pub cache_hits: u64,
}

/// The (context, candidate, reference) triple scored for a record.
pub fn score_context(instance: &Instance) -> String {
    let mut turns: Vec<Utterance> = instance.history.clone();
    turns.push(instance.current.clone());
    render_utterances(&turns)
}

impl Engine {
    fn template(&self, cfg: &RunConfig) -> Result<&PromptTemplate, HarnessError> {
        self.templates
            .get(&cfg.template_id)
            .ok_or_else(|| HarnessError::ConfigInvalid(format!("unknown template {}", cfg.template_id)))
    }

    fn generator(&self, cfg: &RunConfig) -> Result<&Arc<dyn Generator>, HarnessError> {
        self.generators
            .get(&cfg.endpoint)
            .ok_or_else(|| HarnessError::ConfigInvalid(format!("unknown endpoint {}", cfg.endpoint)))
    }

    fn attempt(&self, cfg: &RunConfig, instance: &Instance, rec: &mut EvalRecord) -> Result<(), HarnessError> {
        let template = self.template(cfg)?;
        let tokenizer = self.tokenizers.get(&cfg.tokenizer)?;
        let ctx = self.compressor.compress_instance(instance, &cfg.representation)?;
        let exemplar = match cfg.shot {
            ShotMode::FewShot => Some(select_exemplar(
                instance,
                &self.pool,
                &cfg.representation,
                &self.compressor,
                cfg.seed,
            )?),
            ShotMode::ZeroShot => None,
        };
        let rendered = render_with(template, instance, &ctx, exemplar.as_ref(), tokenizer.as_ref())?;
        let generator = self.generator(cfg)?;
        let gen = generator.complete(&rendered.text, &self.decoding)?;
        rec.model_id = gen.model_id.clone();
        rec.prompt_tokens = rendered.total_tokens;
        rec.component_lengths = rendered.component_lengths;
        rec.completion_tokens = tokenizer.count(&gen.text);
        rec.generated = gen.text.trim().to_string();
        rec.cached = gen.cached;
        let pair = ScorePair {
            context: score_context(instance),
            candidate: rec.generated.clone(),
            reference: rec.reference.clone(),
        };
        for m in &self.metrics {
            let value = if m.is_local() {
                meteor(&pair.candidate, &pair.reference)
            } else {
                let input = PairInput {
                    pair_ref: rec.record_id.clone(),
                    pair: pair.clone(),
                };
                remote_score(m, &[input], &self.scorer)?[0].value
            };
            rec.scores.insert(m.clone(), value);
        }
        Ok(())
    }

    /// Evaluates one (config, instance) cell. Failures come back as a
    /// tombstone record rather than an error.
    pub fn evaluate(&self, cfg: &RunConfig, instance: &Instance) -> EvalRecord {
        let iref = InstanceRef::from(instance);
        let mut rec = EvalRecord {
            record_id: EvalRecord::id_for(cfg, &iref),
            run_id: self.run_id.clone(),
            config_id: cfg.id(),
            endpoint: cfg.endpoint.clone(),
            model_id: String::new(),
            template_id: cfg.template_id.clone(),
            template_type: cfg.template_type,
            shot: cfg.shot,
            representation: cfg.representation.clone(),
            history_signal: cfg.history_signal(),
            instance: iref,
            origin_session: instance.origin_session,
            prompt_tokens: 0,
            completion_tokens: 0,
            component_lengths: BTreeMap::new(),
            generated: String::new(),
            reference: instance.target.text.clone(),
            scores: BTreeMap::new(),
            started_ms: now_ms(),
            finished_ms: 0,
            cached: false,
            failure: None,
        };
        if let Err(e) = self.attempt(cfg, instance, &mut rec) {
            log::warn!("{}: {e}", rec.record_id);
            rec.failure = Some(Failure {
                class: e.class().to_string(),
                message: e.to_string(),
            });
            rec.scores.clear();
        }
        rec.finished_ms = now_ms();
        rec
    }
}

/// One record per (config, instance). Cells that already have a
/// non-tombstone record in the store are skipped; failed cells are retried.
pub fn run_matrix(
    engine: &Engine,
    configs: &[RunConfig],
    instances: &[Instance],
    store: &ResultStore,
) -> Result<RunSummary, HarnessError> {
    for c in configs {
        c.validate()?;
        engine.template(c)?;
        engine.generator(c)?;
        engine.tokenizers.get(&c.tokenizer)?;
    }
    store.write_manifest(&Manifest {
        run_id: engine.run_id.clone(),
        configs: configs.to_vec(),
        metrics: engine.metrics.clone(),
        a_values: engine.a_values.clone(),
    })?;
    let done: HashSet<String> = load_records(store.dir())?
        .into_iter()
        .filter(|r| !r.is_tombstone())
        .map(|r| r.record_id)
        .collect();
    let mut work = Vec::new();
    let mut planned = 0;
    for cfg in configs {
        for inst in instances.iter().take(cfg.limit) {
            planned += 1;
            if !done.contains(&EvalRecord::id_for(cfg, &InstanceRef::from(inst))) {
                work.push((cfg, inst));
            }
        }
    }
    let next = AtomicUsize::new(0);
    let written = AtomicUsize::new(0);
    let tombstones = AtomicUsize::new(0);
    let first_error: std::sync::Mutex<Option<HarnessError>> = std::sync::Mutex::new(None);
    std::thread::scope(|s| {
        for _ in 0..engine.workers.clamp(1, work.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= work.len() || first_error.lock().unwrap().is_some() {
                    break;
                }
                let (cfg, inst) = work[i];
                let rec = engine.evaluate(cfg, inst);
                if rec.is_tombstone() {
                    tombstones.fetch_add(1, Ordering::SeqCst);
                }
                match store.append(&rec) {
                    Ok(()) => {
                        written.fetch_add(1, Ordering::SeqCst);
                    }
                    Err(e) => {
                        first_error.lock().unwrap().get_or_insert(e);
                    }
                }
            });
        }
    });
    if let Some(e) = first_error.into_inner().unwrap() {
        return Err(e);
    }
    Ok(RunSummary {
        run_id: engine.run_id.clone(),
        planned,
        skipped_existing: planned - work.len(),
        written: written.into_inner(),
        tombstones: tombstones.into_inner(),
        network_calls: 0,
        cache_hits: 0,
    })
}

/// Runs a run file end to end against `store_dir` (or the file's `store`).
/// LLM responses are cached on disk inside the store.
pub fn run_eval(run: &RunFile, store_dir: Option<&Path>) -> Result<RunSummary, HarnessError> {
    let dir = store_dir
        .map(Path::to_path_buf)
        .or_else(|| run.store.clone())
        .ok_or_else(|| HarnessError::ConfigInvalid("no store directory given".into()))?;
    let store = ResultStore::open(&dir)?;
    let convs = run.conversations()?;
    let all_instances = crate::corpus::build_corpus_instances(&convs)?;
    let mut instances = all_instances.clone();
    instances.truncate(run.limit);
    let configs = run.expand(corpus_background_kind(&convs))?;

    let cache_root = store.cache_dir();
    let mut clients: BTreeMap<String, Arc<LlmClient>> = BTreeMap::new();
    for id in &run.matrix.endpoints {
        clients.insert(id.clone(), Arc::new(run.endpoint(id)?.client(Some(&cache_root))?));
    }
    let scorer = run.scorer.client()?;
    let engine = Engine {
        run_id: run.name.clone(),
        generators: clients
            .iter()
            .map(|(k, v)| (k.clone(), v.clone() as Arc<dyn Generator>))
            .collect(),
        compressor: Arc::new(run.compressor(&scorer, Some(&cache_root))?),
        scorer,
        templates: run.templates()?.into_iter().map(|t| (t.id.clone(), t)).collect(),
        pool: ExemplarPool::new(all_instances),
        metrics: run.metrics.ids.clone(),
        a_values: run.metrics.a_values.clone(),
        tokenizers: TokenizerRegistry::default(),
        decoding: run.decoding.clone(),
        workers: run.endpoints.iter().map(|e| e.max_parallel).max().unwrap_or(1),
    };
    let mut summary = run_matrix(&engine, &configs, &instances, &store)?;
    for c in clients.values() {
        let u = c.usage();
        summary.network_calls += u.network_calls;
        summary.cache_hits += u.cache_hits;
    }
    log::info!(
        "{}: {} planned, {} skipped, {} written, {} tombstones, {} network calls",
        summary.run_id,
        summary.planned,
        summary.skipped_existing,
        summary.written,
        summary.tombstones,
        summary.network_calls
    );
    Ok(summary)
}

use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::compressor::HistoryRepresentation;
use crate::metrics::{MetricId, MetricRecord};
use crate::prompt::{InstanceRef, ShotMode, Slot};

use super::config::{RunConfig, TemplateType};
use super::HarnessError;

pub const RECORDS_FILE: &str = "records.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const CACHE_DIR: &str = "cache";

/// Why an instance produced no generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub class: String,
    pub message: String,
}

/// One (config, instance) evaluation. A record with `failure` set is a
/// tombstone: it is kept in the store but excluded from reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub record_id: String,
    pub run_id: String,
    pub config_id: String,
    pub endpoint: String,
    pub model_id: String,
    pub template_id: String,
    pub template_type: TemplateType,
    pub shot: ShotMode,
    pub representation: HistoryRepresentation,
    pub history_signal: String,
    pub instance: InstanceRef,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin_session: Option<u32>,
    pub prompt_tokens: usize,
    pub completion_tokens: usize,
    #[serde(default)]
    pub component_lengths: BTreeMap<Slot, usize>,
    pub generated: String,
    pub reference: String,
    #[serde(default)]
    pub scores: BTreeMap<MetricId, f64>,
    pub started_ms: u64,
    pub finished_ms: u64,
    #[serde(default)]
    pub cached: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<Failure>,
}

impl EvalRecord {
    pub fn id_for(config: &RunConfig, instance: &InstanceRef) -> String {
        format!("{}#{}:{}", config.id(), instance.conversation_id, instance.target_index)
    }

    pub fn is_tombstone(&self) -> bool {
        self.failure.is_some()
    }
}

impl MetricRecord for EvalRecord {
    fn record_id(&self) -> String {
        self.record_id.clone()
    }

    fn metric_value(&self, metric: &MetricId) -> Option<f64> {
        self.scores.get(metric).copied()
    }

    fn combined_tokens(&self) -> usize {
        self.prompt_tokens + self.completion_tokens
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub run_id: String,
    pub configs: Vec<RunConfig>,
    pub metrics: Vec<MetricId>,
    pub a_values: Vec<f64>,
}

/// Append-only JSONL result store with a run manifest. Records are
/// written through one lock; a later record with the same id supersedes an
/// earlier one, which is how retried tombstones are replaced.
pub struct ResultStore {
    dir: PathBuf,
    writer: Mutex<BufWriter<File>>,
}

impl ResultStore {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, HarnessError> {
        let dir = dir.as_ref().to_path_buf();
        std::fs::create_dir_all(&dir).map_err(|e| HarnessError::Io(format!("{}: {e}", dir.display())))?;
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(dir.join(RECORDS_FILE))
            .map_err(|e| HarnessError::Io(e.to_string()))?;
        Ok(ResultStore {
            dir,
            writer: Mutex::new(BufWriter::new(file)),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn cache_dir(&self) -> PathBuf {
        self.dir.join(CACHE_DIR)
    }

    pub fn append(&self, record: &EvalRecord) -> Result<(), HarnessError> {
        let line = serde_json::to_string(record).map_err(|e| HarnessError::Io(e.to_string()))?;
        let mut w = self.writer.lock().unwrap();
        writeln!(w, "{line}").and_then(|_| w.flush()).map_err(|e| HarnessError::Io(e.to_string()))
    }

    /// Records the run's configs, merged with those already present.
    pub fn write_manifest(&self, manifest: &Manifest) -> Result<(), HarnessError> {
        let merged = match read_manifest(&self.dir)? {
            Some(old) if old.run_id != manifest.run_id => {
                return Err(HarnessError::ConfigInvalid(format!(
                    "store belongs to run {}, not {}",
                    old.run_id, manifest.run_id
                )))
            }
            Some(mut old) => {
                for c in &manifest.configs {
                    if !old.configs.iter().any(|o| o.id() == c.id()) {
                        old.configs.push(c.clone());
                    }
                }
                old.metrics = manifest.metrics.clone();
                old.a_values = manifest.a_values.clone();
                old
            }
            None => manifest.clone(),
        };
        let text = serde_json::to_string_pretty(&merged).map_err(|e| HarnessError::Io(e.to_string()))?;
        let tmp = self.dir.join(format!("{MANIFEST_FILE}.tmp"));
        std::fs::write(&tmp, text)
            .and_then(|_| std::fs::rename(&tmp, self.dir.join(MANIFEST_FILE)))
            .map_err(|e| HarnessError::Io(e.to_string()))
    }
}

pub fn read_manifest(dir: impl AsRef<Path>) -> Result<Option<Manifest>, HarnessError> {
    let path = dir.as_ref().join(MANIFEST_FILE);
    match std::fs::read_to_string(&path) {
        Ok(text) => serde_json::from_str(&text)
            .map(Some)
            .map_err(|e| HarnessError::StoreCorrupt(format!("{}: {e}", path.display()))),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(HarnessError::Io(e.to_string())),
    }
}

/// Every record in the store, latest version per id, sorted by id.
pub fn load_records(dir: impl AsRef<Path>) -> Result<Vec<EvalRecord>, HarnessError> {
    let path = dir.as_ref().join(RECORDS_FILE);
    let file = match File::open(&path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(HarnessError::Io(e.to_string())),
    };
    let mut latest: HashMap<String, EvalRecord> = HashMap::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| HarnessError::Io(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: EvalRecord = serde_json::from_str(&line)
            .map_err(|e| HarnessError::StoreCorrupt(format!("{}:{}: {e}", path.display(), i + 1)))?;
        latest.insert(rec.record_id.clone(), rec);
    }
    let mut out: Vec<EvalRecord> = latest.into_values().collect();
    out.sort_by(|a, b| a.record_id.cmp(&b.record_id));
    Ok(out)
}

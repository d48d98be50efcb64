//! Evaluation runs: expand a run file into configurations, generate and
//! score each instance against the configured endpoints, persist records,
//! and build length and UID reports from the store.

mod chat;
mod config;
mod report;
mod run;
mod store;

use thiserror::Error;

use crate::client::ClientError;
use crate::compressor::CompressError;
use crate::corpus::CorpusError;
use crate::metrics::{MetricId, MetricsError};
use crate::prompt::PromptError;
use crate::tokenize::UnknownTokenizer;

pub use chat::{chat_turn, ChatSession, ChatSettings, ChatTurn};
pub use config::{
    default_a_values, synthetic_conversations, CompressorSpec, CorpusSpec, EndpointKind, EndpointSpec, MatrixSpec,
    MetricsSpec, RunConfig, RunFile, ScorerSpec, SyntheticSpec, TemplateType,
};
pub use report::{
    length_report, session_report, uid_report, write_ranks, write_reports, write_rows, GroupKey, LengthRow,
    ReportOptions, SessionRow, UidReport,
};
pub use run::{run_eval, run_matrix, Engine, RunSummary};
pub use store::{load_records, read_manifest, EvalRecord, Failure, Manifest, ResultStore, CACHE_DIR, MANIFEST_FILE, RECORDS_FILE};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error("io error: {0}")]
    Io(String),
    #[error("result store corrupt: {0}")]
    StoreCorrupt(String),
    #[error("records lack scores for metric {0}")]
    MissingScores(MetricId),
    #[error("no records to report")]
    EmptySet,
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Compress(#[from] CompressError),
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Tokenizer(#[from] UnknownTokenizer),
}

fn client_class(e: &ClientError) -> &'static str {
    match e {
        ClientError::Timeout { .. } => "Timeout",
        ClientError::RateLimited { .. } => "RateLimited",
        ClientError::Http { .. } => "Http",
        ClientError::Io(_) => "Io",
        ClientError::Decode(_) => "Decode",
        ClientError::LogprobsUnsupported(_) => "LogprobsUnsupported",
        ClientError::DimensionMismatch { .. } => "DimensionMismatch",
        ClientError::EmptyBatch => "EmptyBatch",
        ClientError::Cache(_) => "Cache",
    }
}

impl HarnessError {
    /// Short failure class stored on tombstones. Provider failures report
    /// the underlying client error, e.g. `Timeout`.
    pub fn class(&self) -> &'static str {
        match self {
            HarnessError::ConfigInvalid(_) => "ConfigInvalid",
            HarnessError::Io(_) => "Io",
            HarnessError::StoreCorrupt(_) => "StoreCorrupt",
            HarnessError::MissingScores(_) => "MissingScores",
            HarnessError::EmptySet => "EmptySet",
            HarnessError::Corpus(_) => "Corpus",
            HarnessError::Prompt(PromptError::Compress(CompressError::Provider(c))) => client_class(c),
            HarnessError::Prompt(_) => "Prompt",
            HarnessError::Compress(CompressError::Provider(c)) => client_class(c),
            HarnessError::Compress(_) => "Compress",
            HarnessError::Client(c) => client_class(c),
            HarnessError::Metrics(_) => "Metrics",
            HarnessError::Tokenizer(_) => "Tokenizer",
        }
    }
}

//! Prompt templates, exemplar selection and rendering.
//!
//! Templates are declarative lists of literal and slot segments, so every
//! rendered prompt carries an exact per-slot token breakdown.

mod catalog;
mod exemplar;
mod render;
mod template;

use thiserror::Error;

use crate::compressor::CompressError;
use crate::tokenize::UnknownTokenizer;

pub use catalog::{
    builtin_catalog, manual_template, manual_template_id, perplexity_summary_template, PPL_FLAN_T5_SUMMARY_ZS,
    SUPPORTED_K,
};
pub use exemplar::{select_exemplar, shifted_instance, Exemplar, ExemplarOrigin, ExemplarPool};
pub use render::{render_prompt, render_with, InstanceRef, RenderedPrompt};
pub use template::{
    load_templates, load_templates_file, write_templates, PromptTemplate, Segment, ShotMode, Slot,
    TemplateContext,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PromptError {
    #[error("bad template {id}: {reason}")]
    BadTemplate { id: String, reason: String },
    #[error("no data for slot {0}")]
    MissingSlotData(Slot),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("io error: {0}")]
    Io(String),
    #[error("no instance available for a random exemplar")]
    EmptyCorpus,
    #[error("template {template} expects {expected} context, got {got}")]
    IncompatibleContext { template: String, expected: String, got: String },
    #[error(transparent)]
    Compress(#[from] CompressError),
    #[error(transparent)]
    Tokenizer(#[from] UnknownTokenizer),
}

//! Cost-aware ("frugal") prompting for dialog response generation.
//!
//! The crate covers the whole loop: load two-party dialog corpora
//! ([`corpus`]), compress the dialog history ([`compressor`]), render
//! zero- and few-shot prompts from declarative templates ([`prompt`]),
//! pick templates by perplexity ([`optimizer`]), call OpenAI-compatible
//! endpoints ([`client`]), score generations and weigh quality against
//! prompt length with usable information density ([`metrics`]), and run
//! whole evaluation matrices with reports ([`harness`]).
//!
//! Everything runs offline against in-process stubs; see the crate's
//! `examples/` directory for one runnable program per capability.

pub mod client;
pub mod compressor;
pub mod corpus;
pub mod harness;
pub mod metrics;
pub mod optimizer;
pub mod prompt;
pub mod tokenize;

pub use compressor::{CompressedContext, Compressor, HistoryRepresentation};
pub use corpus::{BackgroundInfo, Conversation, DatasetKind, Instance, Speaker, Utterance};

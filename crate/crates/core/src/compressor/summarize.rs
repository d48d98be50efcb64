use std::collections::BTreeSet;
use std::fmt;

use crate::client::scorer::{ScorerClient, SpeakerTurn, SummarizeRequest};
use crate::client::ClientError;
use crate::corpus::{BackgroundInfo, BackgroundKind, Speaker, Utterance};

use super::CompressError;

/// Summarizer ids known out of the box: dialog (BART-D, Pegasus-DS) and
/// generic (Pegasus-CD) summarizers.
pub const BUILTIN_SUMMARIZERS: [&str; 3] = ["bart-d", "pegasus-cd", "pegasus-ds"];

pub trait Summarizer: Send + Sync {
    fn summarize(&self, summarizer_id: &str, turns: &[SpeakerTurn]) -> Result<String, ClientError>;
}

impl Summarizer for ScorerClient {
    fn summarize(&self, summarizer_id: &str, turns: &[SpeakerTurn]) -> Result<String, ClientError> {
        let resp = ScorerClient::summarize(
            self,
            &SummarizeRequest {
                summarizer: summarizer_id.to_string(),
                utterances: turns.to_vec(),
            },
        )?;
        Ok(resp.summary)
    }
}

#[derive(Debug, Clone)]
pub struct SummarizerRegistry {
    ids: BTreeSet<String>,
}

impl Default for SummarizerRegistry {
    fn default() -> Self {
        SummarizerRegistry {
            ids: BUILTIN_SUMMARIZERS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl SummarizerRegistry {
    pub fn register(&mut self, id: impl Into<String>) {
        self.ids.insert(id.into());
    }

    pub fn contains(&self, id: &str) -> bool {
        self.ids.contains(id)
    }

    pub(crate) fn check(&self, id: &str) -> Result<(), CompressError> {
        if self.contains(id) {
            Ok(())
        } else {
            Err(CompressError::UnknownSummarizer(id.to_string()))
        }
    }
}

fn map_service_error(id: &str, e: ClientError) -> CompressError {
    match e.http_status() {
        Some(404) => CompressError::UnknownSummarizer(id.to_string()),
        Some(503) => CompressError::ServiceUnavailable(e.to_string()),
        _ => match e {
            ClientError::Io(_) | ClientError::Timeout { .. } => CompressError::ServiceUnavailable(e.to_string()),
            other => CompressError::Provider(other),
        },
    }
}

pub(crate) fn turns_of(history: &[Utterance]) -> Vec<SpeakerTurn> {
    history
        .iter()
        .map(|u| SpeakerTurn {
            speaker: u.speaker.prompt_name().to_string(),
            text: u.text.clone(),
        })
        .collect()
}

pub fn summarize_history(
    history: &[Utterance],
    summarizer_id: &str,
    registry: &SummarizerRegistry,
    client: &dyn Summarizer,
) -> Result<String, CompressError> {
    registry.check(summarizer_id)?;
    if history.is_empty() {
        return Err(CompressError::PreconditionViolation("cannot summarize an empty history".into()));
    }
    client
        .summarize(summarizer_id, &turns_of(history))
        .map_err(|e| map_service_error(summarizer_id, e))
}

/// Summarized background information, one part per side.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BackgroundSummary {
    pub p1: Option<String>,
    pub p2: Option<String>,
    pub shared: Option<String>,
}

impl fmt::Display for BackgroundSummary {
    /// `P1: <p1> P2: <p2>`, with absent sides omitted; shared knowledge
    /// comes first.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts = Vec::new();
        if let Some(s) = &self.shared {
            parts.push(s.clone());
        }
        if let Some(s) = &self.p1 {
            parts.push(format!("P1: {s}"));
        }
        if let Some(s) = &self.p2 {
            parts.push(format!("P2: {s}"));
        }
        f.write_str(&parts.join(" "))
    }
}

pub fn summarize_background(
    bi: &BackgroundInfo,
    bi_summarizer_id: &str,
    registry: &SummarizerRegistry,
    client: &dyn Summarizer,
) -> Result<BackgroundSummary, CompressError> {
    registry.check(bi_summarizer_id)?;
    bi.validate().map_err(CompressError::PreconditionViolation)?;
    let side = |speaker: Speaker| -> Result<Option<String>, CompressError> {
        bi.text_for(speaker)
            .map(|text| {
                let turn = SpeakerTurn {
                    speaker: speaker.prompt_name().to_string(),
                    text: text.to_string(),
                };
                client
                    .summarize(bi_summarizer_id, &[turn])
                    .map_err(|e| map_service_error(bi_summarizer_id, e))
            })
            .transpose()
    };
    let shared = match (bi.kind, bi.shared_text.as_deref()) {
        (BackgroundKind::Knowledge, Some(text)) => {
            let turn = SpeakerTurn {
                speaker: Speaker::P1.prompt_name().to_string(),
                text: text.to_string(),
            };
            Some(
                client
                    .summarize(bi_summarizer_id, &[turn])
                    .map_err(|e| map_service_error(bi_summarizer_id, e))?,
            )
        }
        _ => None,
    };
    Ok(BackgroundSummary {
        p1: side(Speaker::P1)?,
        p2: side(Speaker::P2)?,
        shared,
    })
}

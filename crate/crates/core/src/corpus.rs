//! Two-party dialog corpora: parsing, utterance normalization and
//! construction of context/response instances.
//!
//! Conversations are stored one JSON object per line:
//!
//! ```text
//! {"id":"c1","dataset":"msc","utterances":[{"speaker":"p1","text":"hi","session":1}, ...],
//!  "background":{"kind":"persona","p1":"...","p2":"..."}}
//! ```

use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("line {line}: malformed record: {reason}")]
    MalformedRecord { line: usize, reason: String },
    #[error("conversation {0}: speakers do not alternate starting with p1")]
    NonAlternatingSpeakers(String),
    #[error("conversation {0}: fewer than 2 utterances")]
    TooShort(String),
    #[error("conversation {id}: invalid background info: {reason}")]
    InvalidBackground { id: String, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speaker {
    P1,
    P2,
}

impl Speaker {
    /// Name used for this speaker inside prompts and summarizer requests.
    pub fn prompt_name(self) -> &'static str {
        match self {
            Speaker::P1 => "Person1",
            Speaker::P2 => "Person2",
        }
    }

    pub fn other(self) -> Speaker {
        match self {
            Speaker::P1 => Speaker::P2,
            Speaker::P2 => Speaker::P1,
        }
    }
}

impl fmt::Display for Speaker {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.prompt_name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Utterance {
    pub speaker: Speaker,
    pub text: String,
    pub index: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub session: Option<u32>,
}

impl Utterance {
    /// `Person1: text` form used in prompts and summaries.
    pub fn labeled(&self) -> String {
        format!("{}: {}", self.speaker.prompt_name(), self.text)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackgroundKind {
    Persona,
    Knowledge,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackgroundInfo {
    pub kind: BackgroundKind,
    #[serde(default, rename = "p1", skip_serializing_if = "Option::is_none")]
    pub p1_text: Option<String>,
    #[serde(default, rename = "p2", skip_serializing_if = "Option::is_none")]
    pub p2_text: Option<String>,
    #[serde(default, rename = "shared", skip_serializing_if = "Option::is_none")]
    pub shared_text: Option<String>,
}

fn non_empty(s: &Option<String>) -> bool {
    s.as_deref().is_some_and(|t| !t.trim().is_empty())
}

impl BackgroundInfo {
    pub fn persona(p1: impl Into<String>, p2: impl Into<String>) -> Self {
        BackgroundInfo {
            kind: BackgroundKind::Persona,
            p1_text: Some(p1.into()),
            p2_text: Some(p2.into()),
            shared_text: None,
        }
    }

    pub fn knowledge(shared: impl Into<String>) -> Self {
        BackgroundInfo {
            kind: BackgroundKind::Knowledge,
            p1_text: None,
            p2_text: None,
            shared_text: Some(shared.into()),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        match self.kind {
            BackgroundKind::Persona if !non_empty(&self.p1_text) && !non_empty(&self.p2_text) => {
                Err("persona background needs p1 or p2 text".into())
            }
            BackgroundKind::Knowledge if !non_empty(&self.shared_text) => {
                Err("knowledge background needs shared text".into())
            }
            _ => Ok(()),
        }
    }

    /// The same background seen from the other side of the conversation.
    pub fn swapped(&self) -> Self {
        BackgroundInfo {
            kind: self.kind,
            p1_text: self.p2_text.clone(),
            p2_text: self.p1_text.clone(),
            shared_text: self.shared_text.clone(),
        }
    }

    pub fn text_for(&self, speaker: Speaker) -> Option<&str> {
        match speaker {
            Speaker::P1 => self.p1_text.as_deref(),
            Speaker::P2 => self.p2_text.as_deref(),
        }
        .filter(|t| !t.trim().is_empty())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Msc,
    Tc,
    Generic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conversation {
    pub id: String,
    pub utterances: Vec<Utterance>,
    pub background: Option<BackgroundInfo>,
    pub dataset_kind: DatasetKind,
    /// Source split tag, e.g. `frequent`/`rare` for merged TC files.
    pub provenance: Option<String>,
}

impl Conversation {
    /// Builds a conversation from alternating texts, first speaker P1.
    pub fn from_texts<S: AsRef<str>>(id: impl Into<String>, kind: DatasetKind, texts: &[S]) -> Self {
        let utterances = texts
            .iter()
            .enumerate()
            .map(|(i, t)| Utterance {
                speaker: if i % 2 == 0 { Speaker::P1 } else { Speaker::P2 },
                text: t.as_ref().to_string(),
                index: i,
                session: None,
            })
            .collect();
        Conversation {
            id: id.into(),
            utterances,
            background: None,
            dataset_kind: kind,
            provenance: None,
        }
    }

    pub fn with_background(mut self, bi: BackgroundInfo) -> Self {
        self.background = Some(bi);
        self
    }

    pub fn check_alternation(&self) -> Result<(), CorpusError> {
        for (i, u) in self.utterances.iter().enumerate() {
            let expected = if i % 2 == 0 { Speaker::P1 } else { Speaker::P2 };
            if u.speaker != expected {
                return Err(CorpusError::NonAlternatingSpeakers(self.id.clone()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub conversation_id: String,
    pub history: Vec<Utterance>,
    pub current: Utterance,
    pub target: Utterance,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub background: Option<BackgroundInfo>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin_session: Option<u32>,
}

impl Instance {
    /// `conversation:target_index`, unique within a corpus.
    pub fn key(&self) -> String {
        format!("{}:{}", self.conversation_id, self.target.index)
    }
}

/// Trims trailing whitespace and capitalizes the first alphabetic
/// character of every sentence. A sentence starts the string or follows
/// one of `.`, `!`, `?` plus whitespace.
pub fn normalize_utterance(text: &str) -> String {
    let trimmed = text.trim_end();
    let mut out = String::with_capacity(trimmed.len());
    let mut at_sentence_start = true;
    let mut prev: Option<char> = None;
    for c in trimmed.chars() {
        if c.is_whitespace() && matches!(prev, Some('.' | '!' | '?')) {
            at_sentence_start = true;
        }
        if at_sentence_start && c.is_alphabetic() {
            out.extend(c.to_uppercase());
            at_sentence_start = false;
        } else {
            out.push(c);
        }
        prev = Some(c);
    }
    out
}

#[derive(Debug, Deserialize, Serialize)]
struct RecordUtterance {
    speaker: Speaker,
    text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    session: Option<u32>,
}

#[derive(Debug, Deserialize, Serialize)]
struct Record {
    id: String,
    dataset: DatasetKind,
    utterances: Vec<RecordUtterance>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    background: Option<BackgroundInfo>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    provenance: Option<String>,
    // MSC time-elapsed metadata is accepted and dropped.
    #[serde(default, skip_serializing)]
    #[allow(dead_code)]
    time_elapsed: Option<serde_json::Value>,
}

fn conversation_from_record(rec: Record, line: usize) -> Result<Conversation, CorpusError> {
    if let Some(bi) = &rec.background {
        bi.validate().map_err(|reason| CorpusError::MalformedRecord { line, reason })?;
    }
    let utterances = rec
        .utterances
        .into_iter()
        .enumerate()
        .map(|(index, u)| Utterance {
            speaker: u.speaker,
            text: u.text,
            index,
            session: u.session,
        })
        .collect();
    let conv = Conversation {
        id: rec.id,
        utterances,
        background: rec.background,
        dataset_kind: rec.dataset,
        provenance: rec.provenance,
    };
    conv.check_alternation()?;
    Ok(conv)
}

/// Parses conversation records, one per non-blank line, in file order.
pub fn parse_conversations<R: BufRead>(reader: R) -> Result<Vec<Conversation>, CorpusError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(&line).map_err(|e| CorpusError::MalformedRecord {
            line: line_no,
            reason: e.to_string(),
        })?;
        out.push(conversation_from_record(rec, line_no)?);
    }
    Ok(out)
}

pub fn parse_conversations_str(text: &str) -> Result<Vec<Conversation>, CorpusError> {
    parse_conversations(text.as_bytes())
}

pub fn read_conversations(path: impl AsRef<std::path::Path>) -> Result<Vec<Conversation>, CorpusError> {
    let file = std::fs::File::open(path)?;
    parse_conversations(std::io::BufReader::new(file))
}

pub fn conversation_to_line(conv: &Conversation) -> String {
    let rec = Record {
        id: conv.id.clone(),
        dataset: conv.dataset_kind,
        utterances: conv
            .utterances
            .iter()
            .map(|u| RecordUtterance {
                speaker: u.speaker,
                text: u.text.clone(),
                session: u.session,
            })
            .collect(),
        background: conv.background.clone(),
        provenance: conv.provenance.clone(),
        time_elapsed: None,
    };
    serde_json::to_string(&rec).expect("conversation record serializes")
}

pub fn write_conversations<W: Write>(mut w: W, convs: &[Conversation]) -> std::io::Result<()> {
    for c in convs {
        writeln!(w, "{}", conversation_to_line(c))?;
    }
    Ok(())
}

/// Applies [`normalize_utterance`] to every utterance and background text.
pub fn normalize_conversation(conv: &mut Conversation) {
    for u in &mut conv.utterances {
        u.text = normalize_utterance(&u.text);
    }
    if let Some(bi) = &mut conv.background {
        for t in [&mut bi.p1_text, &mut bi.p2_text, &mut bi.shared_text].into_iter().flatten() {
            *t = t.trim_end().to_string();
        }
    }
}

/// Concatenates the TC `frequent` and `rare` splits, tagging each
/// conversation with the split it came from.
pub fn merge_tc_splits(frequent: Vec<Conversation>, rare: Vec<Conversation>) -> Vec<Conversation> {
    let tag = |mut c: Conversation, t: &str| {
        c.provenance = Some(t.to_string());
        c
    };
    frequent
        .into_iter()
        .map(|c| tag(c, "frequent"))
        .chain(rare.into_iter().map(|c| tag(c, "rare")))
        .collect()
}

/// Context/response instances for one conversation.
///
/// Every (P1, P2) turn yields an instance whose history is the entire
/// prefix before the P1 utterance. MSC conversations only emit instances
/// whose response falls in sessions 2-4; history still spans all sessions.
/// A trailing unanswered P1 utterance is dropped.
pub fn build_instances(conv: &Conversation) -> Result<Vec<Instance>, CorpusError> {
    if conv.utterances.len() < 2 {
        return Err(CorpusError::TooShort(conv.id.clone()));
    }
    conv.check_alternation()?;
    let mut out = Vec::new();
    for target_idx in (1..conv.utterances.len()).step_by(2) {
        let target = &conv.utterances[target_idx];
        if conv.dataset_kind == DatasetKind::Msc && !matches!(target.session, Some(2..=4)) {
            continue;
        }
        out.push(instance_at(conv, target_idx));
    }
    Ok(out)
}

pub(crate) fn instance_at(conv: &Conversation, target_idx: usize) -> Instance {
    let target = conv.utterances[target_idx].clone();
    Instance {
        conversation_id: conv.id.clone(),
        history: conv.utterances[..target_idx - 1].to_vec(),
        current: conv.utterances[target_idx - 1].clone(),
        origin_session: target.session,
        target,
        background: conv.background.clone(),
    }
}

/// Instances for a whole corpus, in conversation order. Conversations that
/// are too short are skipped.
pub fn build_corpus_instances(convs: &[Conversation]) -> Result<Vec<Instance>, CorpusError> {
    let mut out = Vec::new();
    for c in convs {
        match build_instances(c) {
            Ok(mut v) => out.append(&mut v),
            Err(CorpusError::TooShort(_)) => continue,
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

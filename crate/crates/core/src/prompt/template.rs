use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::PromptError;
use crate::compressor::HistoryClass;
use crate::corpus::BackgroundKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Slot {
    /// Dialog history (selected utterances or a summary).
    #[serde(rename = "S")]
    History,
    /// Person1's latest utterance.
    #[serde(rename = "U")]
    Utterance,
    /// Person2's response. Only valid as an exemplar slot.
    #[serde(rename = "R")]
    Response,
    #[serde(rename = "BI_P1")]
    BackgroundP1,
    #[serde(rename = "BI_P2")]
    BackgroundP2,
    #[serde(rename = "S_E")]
    ExemplarHistory,
    #[serde(rename = "U_E")]
    ExemplarUtterance,
    #[serde(rename = "R_E")]
    ExemplarResponse,
    #[serde(rename = "BI_P1_E")]
    ExemplarBackgroundP1,
    #[serde(rename = "BI_P2_E")]
    ExemplarBackgroundP2,
    #[serde(rename = "INSTRUCTION")]
    Instruction,
}

impl Slot {
    pub fn name(self) -> &'static str {
        match self {
            Slot::History => "S",
            Slot::Utterance => "U",
            Slot::Response => "R",
            Slot::BackgroundP1 => "BI_P1",
            Slot::BackgroundP2 => "BI_P2",
            Slot::ExemplarHistory => "S_E",
            Slot::ExemplarUtterance => "U_E",
            Slot::ExemplarResponse => "R_E",
            Slot::ExemplarBackgroundP1 => "BI_P1_E",
            Slot::ExemplarBackgroundP2 => "BI_P2_E",
            Slot::Instruction => "INSTRUCTION",
        }
    }

    pub fn is_exemplar(self) -> bool {
        matches!(
            self,
            Slot::ExemplarHistory
                | Slot::ExemplarUtterance
                | Slot::ExemplarResponse
                | Slot::ExemplarBackgroundP1
                | Slot::ExemplarBackgroundP2
        )
    }

    /// The exemplar counterpart of a main-input slot.
    pub fn exemplar(self) -> Option<Slot> {
        match self {
            Slot::History => Some(Slot::ExemplarHistory),
            Slot::Utterance => Some(Slot::ExemplarUtterance),
            Slot::BackgroundP1 => Some(Slot::ExemplarBackgroundP1),
            Slot::BackgroundP2 => Some(Slot::ExemplarBackgroundP2),
            _ => None,
        }
    }

    /// Context slots whose line is dropped when the value is empty.
    pub(crate) fn is_optional(self) -> bool {
        matches!(
            self,
            Slot::History
                | Slot::BackgroundP1
                | Slot::BackgroundP2
                | Slot::ExemplarHistory
                | Slot::ExemplarBackgroundP1
                | Slot::ExemplarBackgroundP2
        )
    }
}

impl fmt::Display for Slot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Segment {
    Lit(String),
    Slot(Slot),
}

impl Segment {
    pub fn lit(s: impl Into<String>) -> Self {
        Segment::Lit(s.into())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ShotMode {
    #[serde(rename = "zs")]
    ZeroShot,
    #[serde(rename = "fs")]
    FewShot,
}

impl ShotMode {
    pub fn label(self) -> &'static str {
        match self {
            ShotMode::ZeroShot => "ZS",
            ShotMode::FewShot => "FS",
        }
    }
}

impl FromStr for ShotMode {
    type Err = PromptError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "zs" | "zero" | "zero-shot" | "zeroshot" => Ok(ShotMode::ZeroShot),
            "fs" | "few" | "few-shot" | "fewshot" => Ok(ShotMode::FewShot),
            _ => Err(PromptError::Parse(format!("unknown shot mode {s:?}"))),
        }
    }
}

impl fmt::Display for ShotMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ShotMode::ZeroShot => "zs",
            ShotMode::FewShot => "fs",
        })
    }
}

/// Which context a template expects: a history family, background
/// information, or both. Written as `summary`, `recent+persona`,
/// `knowledge`, ...
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TemplateContext {
    pub history: Option<HistoryClass>,
    pub background: Option<BackgroundKind>,
}

impl fmt::Display for TemplateContext {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let h = self.history.map(|h| match h {
            HistoryClass::Full => "full",
            HistoryClass::Recent => "recent",
            HistoryClass::Semantic => "semantic",
            HistoryClass::Summary => "summary",
        });
        let b = self.background.map(|b| match b {
            BackgroundKind::Persona => "persona",
            BackgroundKind::Knowledge => "knowledge",
        });
        match (h, b) {
            (Some(h), Some(b)) => write!(f, "{h}+{b}"),
            (Some(x), None) | (None, Some(x)) => f.write_str(x),
            (None, None) => f.write_str("none"),
        }
    }
}

impl FromStr for TemplateContext {
    type Err = PromptError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut ctx = TemplateContext {
            history: None,
            background: None,
        };
        for part in s.split('+').map(str::trim) {
            match part {
                "full" => ctx.history = Some(HistoryClass::Full),
                "recent" => ctx.history = Some(HistoryClass::Recent),
                "semantic" => ctx.history = Some(HistoryClass::Semantic),
                "summary" => ctx.history = Some(HistoryClass::Summary),
                "persona" => ctx.background = Some(BackgroundKind::Persona),
                "knowledge" => ctx.background = Some(BackgroundKind::Knowledge),
                "none" => {}
                other => return Err(PromptError::Parse(format!("unknown template context {other:?}"))),
            }
        }
        Ok(ctx)
    }
}

impl Serialize for TemplateContext {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for TemplateContext {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub id: String,
    pub shot: ShotMode,
    pub context: TemplateContext,
    pub segments: Vec<Segment>,
    /// Fills the `INSTRUCTION` slot when the template uses one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instruction: Option<String>,
}

impl PromptTemplate {
    pub fn slots(&self) -> impl Iterator<Item = Slot> + '_ {
        self.segments.iter().filter_map(|s| match s {
            Segment::Slot(slot) => Some(*slot),
            Segment::Lit(_) => None,
        })
    }

    pub fn has_slot(&self, slot: Slot) -> bool {
        self.slots().any(|s| s == slot)
    }

    pub fn validate(&self) -> Result<(), PromptError> {
        let bad = |reason: String| PromptError::BadTemplate {
            id: self.id.clone(),
            reason,
        };
        let count = |slot| self.slots().filter(|s| *s == slot).count();
        if count(Slot::Utterance) != 1 {
            return Err(bad(format!("slot U must appear exactly once, found {}", count(Slot::Utterance))));
        }
        if count(Slot::Response) > 0 {
            return Err(bad("slot R may only appear as the exemplar response R_E".into()));
        }
        if self.has_slot(Slot::Instruction) && self.instruction.is_none() {
            return Err(bad("INSTRUCTION slot without an instruction text".into()));
        }
        match self.shot {
            ShotMode::ZeroShot => {
                if let Some(s) = self.slots().find(|s| s.is_exemplar()) {
                    return Err(bad(format!("zero-shot template uses exemplar slot {s}")));
                }
            }
            ShotMode::FewShot => {
                let mut required = vec![Slot::ExemplarUtterance, Slot::ExemplarResponse];
                required.extend(
                    [Slot::History, Slot::BackgroundP1, Slot::BackgroundP2]
                        .into_iter()
                        .filter(|s| self.has_slot(*s))
                        .filter_map(Slot::exemplar),
                );
                if let Some(s) = required.into_iter().find(|s| !self.has_slot(*s)) {
                    return Err(bad(format!("few-shot template lacks exemplar slot {s}")));
                }
            }
        }
        if self.context.history.is_some() && !self.has_slot(Slot::History) {
            return Err(bad("history context declared but slot S missing".into()));
        }
        if self.context.background.is_some() && !self.has_slot(Slot::BackgroundP1) {
            return Err(bad("background context declared but slot BI_P1 missing".into()));
        }
        Ok(())
    }
}

/// Reads a catalog: one JSON template record per non-blank line.
pub fn load_templates<R: BufRead>(reader: R) -> Result<Vec<PromptTemplate>, PromptError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| PromptError::Io(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let t: PromptTemplate = serde_json::from_str(&line)
            .map_err(|e| PromptError::Parse(format!("line {}: {e}", i + 1)))?;
        t.validate()?;
        out.push(t);
    }
    Ok(out)
}

pub fn load_templates_file(path: impl AsRef<std::path::Path>) -> Result<Vec<PromptTemplate>, PromptError> {
    let file = std::fs::File::open(path.as_ref())
        .map_err(|e| PromptError::Io(format!("{}: {e}", path.as_ref().display())))?;
    load_templates(std::io::BufReader::new(file))
}

pub fn write_templates<W: Write>(mut w: W, templates: &[PromptTemplate]) -> std::io::Result<()> {
    for t in templates {
        writeln!(w, "{}", serde_json::to_string(t).expect("template serializes"))?;
    }
    Ok(())
}

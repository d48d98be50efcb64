use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::compressor::CompressedContext;
use crate::corpus::{BackgroundInfo, Instance, Speaker};
use crate::compressor::BackgroundSummary;
use crate::tokenize::{Tokenizer, WhitespaceTokenizer};

use super::exemplar::Exemplar;
use super::template::{PromptTemplate, Segment, ShotMode, Slot};
use super::PromptError;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct InstanceRef {
    pub conversation_id: String,
    pub target_index: usize,
}

impl From<&Instance> for InstanceRef {
    fn from(i: &Instance) -> Self {
        InstanceRef {
            conversation_id: i.conversation_id.clone(),
            target_index: i.target.index,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderedPrompt {
    pub text: String,
    pub template_id: String,
    /// Tokens contributed by each slot.
    pub component_lengths: BTreeMap<Slot, usize>,
    /// Tokens contributed by the template's literal text.
    pub literal_tokens: usize,
    /// `literal_tokens` plus the sum of `component_lengths`.
    pub total_tokens: usize,
    pub instance_ref: InstanceRef,
}

impl RenderedPrompt {
    /// Tokens in the exemplar slots.
    pub fn exemplar_slot_tokens(&self) -> usize {
        self.component_lengths
            .iter()
            .filter(|(s, _)| s.is_exemplar())
            .map(|(_, n)| n)
            .sum()
    }
}

/// Background text per side: the summarized form when the context carries
/// one, the raw text otherwise. Shared knowledge fills the Person1 side
/// when there is no per-person text.
fn background_sides(bi: Option<&BackgroundInfo>, summary: Option<&BackgroundSummary>) -> Option<(String, String)> {
    if let Some(s) = summary {
        let p1 = s.p1.clone().or_else(|| s.shared.clone()).unwrap_or_default();
        return Some((p1, s.p2.clone().unwrap_or_default()));
    }
    let bi = bi?;
    let p1 = bi
        .text_for(Speaker::P1)
        .or(bi.shared_text.as_deref())
        .unwrap_or_default()
        .to_string();
    let p2 = bi.text_for(Speaker::P2).unwrap_or_default().to_string();
    Some((p1, p2))
}

fn fill(
    template: &PromptTemplate,
    instance: &Instance,
    ctx: &CompressedContext,
    exemplar: Option<&Exemplar>,
) -> Result<BTreeMap<Slot, String>, PromptError> {
    let mut values = BTreeMap::new();
    values.insert(Slot::History, ctx.history_text());
    values.insert(Slot::Utterance, instance.current.text.clone());
    if let Some(text) = &template.instruction {
        values.insert(Slot::Instruction, text.clone());
    }
    if let Some((p1, p2)) = background_sides(instance.background.as_ref(), ctx.bi_summary.as_ref()) {
        values.insert(Slot::BackgroundP1, p1);
        values.insert(Slot::BackgroundP2, p2);
    }
    if let Some(ex) = exemplar {
        values.insert(Slot::ExemplarHistory, ex.context.history_text());
        values.insert(Slot::ExemplarUtterance, ex.instance.current.text.clone());
        values.insert(Slot::ExemplarResponse, ex.instance.target.text.clone());
        if let Some((p1, p2)) = background_sides(ex.instance.background.as_ref(), ex.context.bi_summary.as_ref()) {
            values.insert(Slot::ExemplarBackgroundP1, p1);
            values.insert(Slot::ExemplarBackgroundP2, p2);
        }
    }
    Ok(values)
}

enum Piece<'a> {
    Lit(&'a str),
    Slot(Slot),
}

/// Segments cut into lines. A line ends after a literal piece that ends
/// in a newline, so a multi-line literal contributes several pieces.
fn lines(segments: &[Segment]) -> Vec<Vec<Piece<'_>>> {
    let mut out = vec![Vec::new()];
    for seg in segments {
        match seg {
            Segment::Slot(s) => out.last_mut().unwrap().push(Piece::Slot(*s)),
            Segment::Lit(text) => {
                for part in text.split_inclusive('\n') {
                    out.last_mut().unwrap().push(Piece::Lit(part));
                    if part.ends_with('\n') {
                        out.push(Vec::new());
                    }
                }
            }
        }
    }
    out
}

/// Renders with the default whitespace tokenizer.
pub fn render_prompt(
    template: &PromptTemplate,
    instance: &Instance,
    ctx: &CompressedContext,
    exemplar: Option<&Exemplar>,
) -> Result<RenderedPrompt, PromptError> {
    render_with(template, instance, ctx, exemplar, &WhitespaceTokenizer)
}

/// Substitutes every slot and records per-slot token counts. Lines whose
/// optional context slot (history, background) is empty are dropped whole.
pub fn render_with(
    template: &PromptTemplate,
    instance: &Instance,
    ctx: &CompressedContext,
    exemplar: Option<&Exemplar>,
    tokenizer: &dyn Tokenizer,
) -> Result<RenderedPrompt, PromptError> {
    if let Some(expected) = template.context.history {
        if expected != ctx.kind.class() {
            return Err(PromptError::IncompatibleContext {
                template: template.id.clone(),
                expected: template.context.to_string(),
                got: ctx.kind.to_string(),
            });
        }
    }
    let exemplar = match template.shot {
        ShotMode::FewShot if exemplar.is_none() => return Err(PromptError::MissingSlotData(Slot::ExemplarUtterance)),
        ShotMode::FewShot => exemplar,
        ShotMode::ZeroShot => None,
    };
    let values = fill(template, instance, ctx, exemplar)?;
    if let Some(missing) = template.slots().find(|s| !values.contains_key(s)) {
        return Err(PromptError::MissingSlotData(missing));
    }

    let mut text = String::new();
    let mut component_lengths = BTreeMap::new();
    let mut literal_tokens = 0;
    for line in lines(&template.segments) {
        let drop = line.iter().any(|p| match p {
            Piece::Slot(s) => s.is_optional() && values[s].trim().is_empty(),
            Piece::Lit(_) => false,
        });
        if drop {
            continue;
        }
        for piece in line {
            match piece {
                Piece::Lit(t) => {
                    literal_tokens += tokenizer.count(t);
                    text.push_str(t);
                }
                Piece::Slot(s) => {
                    let v = &values[&s];
                    *component_lengths.entry(s).or_insert(0) += tokenizer.count(v);
                    text.push_str(v);
                }
            }
        }
    }
    let total_tokens = literal_tokens + component_lengths.values().sum::<usize>();
    Ok(RenderedPrompt {
        text,
        template_id: template.id.clone(),
        component_lengths,
        literal_tokens,
        total_tokens,
        instance_ref: InstanceRef::from(instance),
    })
}

//! Built-in templates: the hand-written instructions for every
//! combination of shot mode, history family and background information,
//! plus one perplexity-selected zero-shot summary template.

use crate::compressor::{HistoryClass, HistoryRepresentation};
use crate::corpus::BackgroundKind;

use super::template::{PromptTemplate, Segment, ShotMode, Slot, TemplateContext};

/// k values covered by [`builtin_catalog`].
pub const SUPPORTED_K: [usize; 5] = [1, 2, 4, 8, 10];

/// Id of the zero-shot summary template selected by perplexity under FLAN-T5-XL.
pub const PPL_FLAN_T5_SUMMARY_ZS: &str = "ppl-flan-t5-xl-zs-summary";

/// How the history is named inside instructions.
fn history_phrase(rep: &HistoryRepresentation) -> String {
    match rep {
        HistoryRepresentation::Full => "full history".into(),
        HistoryRepresentation::RecentK(k) => format!("list of recent-{k} utterances"),
        HistoryRepresentation::SemanticK(k) => format!("list of semantic-{k} utterances"),
        HistoryRepresentation::Summary(_) | HistoryRepresentation::SummaryPlusBi { .. } => "summary".into(),
    }
}

fn id_part(rep: &HistoryRepresentation) -> String {
    match rep {
        HistoryRepresentation::Full => "full".into(),
        HistoryRepresentation::RecentK(k) => format!("recent{k}"),
        HistoryRepresentation::SemanticK(k) => format!("semantic{k}"),
        HistoryRepresentation::Summary(_) | HistoryRepresentation::SummaryPlusBi { .. } => "summary".into(),
    }
}

fn bi_part(kind: BackgroundKind) -> &'static str {
    match kind {
        BackgroundKind::Persona => "persona",
        BackgroundKind::Knowledge => "knowledge",
    }
}

/// Id of the manual template for a setting, e.g. `manual-fs-recent4-persona`.
pub fn manual_template_id(
    shot: ShotMode,
    history: Option<&HistoryRepresentation>,
    background: Option<BackgroundKind>,
) -> String {
    let mut parts = vec!["manual".to_string(), shot.to_string()];
    if let Some(h) = history {
        parts.push(id_part(h));
    }
    if let Some(b) = background {
        parts.push(bi_part(b).to_string());
    }
    if history.is_none() && background.is_none() {
        parts.push("none".into());
    }
    parts.join("-")
}

struct Builder(Vec<Segment>);

impl Builder {
    fn line(&mut self, text: &str) -> &mut Self {
        self.0.push(Segment::lit(format!("{text}\n")));
        self
    }

    fn slot_line(&mut self, prefix: &str, slot: Slot) -> &mut Self {
        self.0.push(Segment::lit(format!("{prefix} ")));
        self.0.push(Segment::Slot(slot));
        self.0.push(Segment::lit("\n"));
        self
    }

    fn context_block(&mut self, h: Option<&str>, bi: bool, exemplar: bool) -> &mut Self {
        let pick = |main: Slot| if exemplar { main.exemplar().unwrap() } else { main };
        if bi {
            self.slot_line("Here are some background details about Person1:", pick(Slot::BackgroundP1));
            self.slot_line("Here are some background details about Person2:", pick(Slot::BackgroundP2));
        }
        if let Some(h) = h {
            self.slot_line(
                &format!("This is a {h} of a dialog exchange between Person1 and Person2:"),
                pick(Slot::History),
            );
        }
        self
    }
}

/// The manual template for a setting. `history: None` gives the
/// background-only variant; at least one of the two must be present.
pub fn manual_template(
    shot: ShotMode,
    history: Option<&HistoryRepresentation>,
    background: Option<BackgroundKind>,
) -> PromptTemplate {
    let phrase = history.map(history_phrase);
    let h = phrase.as_deref();
    let bi = background.is_some();
    let instruction = |few_shot_tail: bool| match (h, bi) {
        (Some(h), false) => format!(
            "Given the {h} of the dialog exchange between Person1 and Person2, give a consistent and diverse response to the following dialog by Person1."
        ),
        (Some(h), true) if few_shot_tail => format!(
            "Given the {h} of the dialog exchange between Person1 and Person2 and their background details, give a consistent and diverse response to the following dialog spoken by Person1."
        ),
        (Some(h), true) => format!(
            "Given the background details and the {h} of the dialog exchange between Person1 and Person2, give a consistent and diverse response to the following dialog by Person1."
        ),
        (None, _) => "Given the background details of Person1 and Person2, give a consistent and diverse response to the following dialog spoken by Person1.".to_string(),
    };
    let mut b = Builder(Vec::new());
    b.line("Automated Chat System:");
    if shot == ShotMode::FewShot {
        let intro = match (h, bi) {
            (Some(h), false) => format!(
                "Learn from the below example on how to generate consistent and diverse responses between Person1 and Person2 given {h}. Example:"
            ),
            (Some(h), true) => format!(
                "Learn from the below example on how to generate consistent and diverse responses between Person1 and Person2 given background details along with {h}. Example:"
            ),
            (None, _) => "Learn from the below example on how to use background details to generate a consistent and diverse response by Person2 on what Person1 says. Example:".to_string(),
        };
        b.line(&intro);
        b.context_block(h, bi, true);
        b.line(&instruction(false));
        b.slot_line("Person1:", Slot::ExemplarUtterance);
        b.slot_line("Person2:", Slot::ExemplarResponse);
        b.line("Now try it yourself:");
    }
    b.context_block(h, bi, false);
    b.line(&instruction(shot == ShotMode::FewShot));
    b.slot_line("Person1:", Slot::Utterance);
    b.0.push(Segment::lit("Person2:"));
    PromptTemplate {
        id: manual_template_id(shot, history, background),
        shot,
        context: TemplateContext {
            history: history.map(HistoryRepresentation::class),
            background,
        },
        segments: b.0,
        instruction: None,
    }
}

/// The zero-shot summary template chosen by perplexity under FLAN-T5-XL.
pub fn perplexity_summary_template() -> PromptTemplate {
    PromptTemplate {
        id: PPL_FLAN_T5_SUMMARY_ZS.into(),
        shot: ShotMode::ZeroShot,
        context: TemplateContext {
            history: Some(HistoryClass::Summary),
            background: None,
        },
        segments: vec![
            Segment::lit("Here is a summary of the conversation between Person1 and Person2: "),
            Segment::Slot(Slot::History),
            Segment::lit("\nBased on the dialog between the Person1 and the Person2 so far, try to anticipate what the Person2's response might be to the Person1's next statement.\nPerson1: "),
            Segment::Slot(Slot::Utterance),
            Segment::lit("\nPerson2:"),
        ],
        instruction: None,
    }
}

fn catalog_histories() -> Vec<HistoryRepresentation> {
    let mut reps = vec![HistoryRepresentation::Summary(String::new()), HistoryRepresentation::Full];
    reps.extend(SUPPORTED_K.iter().map(|k| HistoryRepresentation::RecentK(*k)));
    reps.extend(SUPPORTED_K.iter().map(|k| HistoryRepresentation::SemanticK(*k)));
    reps
}

/// Every manual template for k in [`SUPPORTED_K`], both shot modes, with
/// and without persona or knowledge, plus the perplexity-selected template.
pub fn builtin_catalog() -> Vec<PromptTemplate> {
    let mut out = Vec::new();
    for shot in [ShotMode::ZeroShot, ShotMode::FewShot] {
        for bg in [None, Some(BackgroundKind::Persona), Some(BackgroundKind::Knowledge)] {
            if bg.is_some() {
                out.push(manual_template(shot, None, bg));
            }
            for rep in catalog_histories() {
                out.push(manual_template(shot, Some(&rep), bg));
            }
        }
    }
    out.push(perplexity_summary_template());
    out
}

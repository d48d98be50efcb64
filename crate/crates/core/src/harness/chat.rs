use crate::client::{DecodingParams, Generator};
use crate::compressor::{Compressor, HistoryRepresentation};
use crate::corpus::{BackgroundInfo, Instance, Speaker, Utterance};
use crate::prompt::{
    manual_template, render_with, select_exemplar, ExemplarPool, RenderedPrompt, ShotMode,
};
use crate::tokenize::{TokenizerRegistry, DEFAULT_TOKENIZER};

use super::config::utterance;
use super::HarnessError;

#[derive(Debug, Clone, PartialEq)]
pub struct ChatSettings {
    pub representation: HistoryRepresentation,
    pub shot: ShotMode,
    pub tokenizer: String,
    pub seed: u64,
    pub decoding: DecodingParams,
}

impl Default for ChatSettings {
    fn default() -> Self {
        ChatSettings {
            representation: HistoryRepresentation::RecentK(2),
            shot: ShotMode::ZeroShot,
            tokenizer: DEFAULT_TOKENIZER.to_string(),
            seed: 0,
            decoding: DecodingParams::default(),
        }
    }
}

/// An interactive dialog. The user speaks as Person1, the model as Person2.
pub struct ChatSession {
    pub id: String,
    pub transcript: Vec<Utterance>,
    pub background: Option<BackgroundInfo>,
    pub settings: ChatSettings,
    pool: ExemplarPool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatTurn {
    pub reply: String,
    pub prompt: RenderedPrompt,
    pub completion_tokens: usize,
}

impl ChatTurn {
    pub fn total_tokens(&self) -> usize {
        self.prompt.total_tokens + self.completion_tokens
    }
}

impl ChatSession {
    pub fn new(id: impl Into<String>, settings: ChatSettings) -> Self {
        ChatSession {
            id: id.into(),
            transcript: Vec::new(),
            background: None,
            settings,
            pool: ExemplarPool::new(Vec::new()),
        }
    }

    pub fn with_background(mut self, background: BackgroundInfo) -> Self {
        self.background = Some(background);
        self
    }

    /// Instances from other dialogs, used when few-shot needs a random exemplar.
    pub fn with_pool(mut self, pool: ExemplarPool) -> Self {
        self.pool = pool;
        self
    }

    /// Applies from the next turn on.
    pub fn set_representation(&mut self, rep: HistoryRepresentation) {
        self.settings.representation = rep;
    }

    /// The instance the next user message would form.
    pub fn pending_instance(&self, message: &str) -> Instance {
        let n = self.transcript.len();
        Instance {
            conversation_id: self.id.clone(),
            history: self.transcript.clone(),
            current: utterance(Speaker::P1, message, n),
            target: utterance(Speaker::P2, "", n + 1),
            background: self.background.clone(),
            origin_session: None,
        }
    }

    /// Renders the prompt for `message` without calling a model.
    pub fn render(&self, message: &str, compressor: &Compressor) -> Result<RenderedPrompt, HarnessError> {
        let s = &self.settings;
        let instance = self.pending_instance(message);
        let template = manual_template(
            s.shot,
            Some(&s.representation),
            self.background.as_ref().map(|b| b.kind),
        );
        let ctx = compressor.compress_instance(&instance, &s.representation)?;
        let exemplar = match s.shot {
            ShotMode::FewShot => Some(select_exemplar(&instance, &self.pool, &s.representation, compressor, s.seed)?),
            ShotMode::ZeroShot => None,
        };
        let tokenizer = TokenizerRegistry::default().get(&s.tokenizer)?;
        Ok(render_with(&template, &instance, &ctx, exemplar.as_ref(), tokenizer.as_ref())?)
    }
}

/// One exchange. The transcript only grows when the model replied, so a
/// failed turn leaves the session as it was.
pub fn chat_turn(
    session: &mut ChatSession,
    message: &str,
    generator: &dyn Generator,
    compressor: &Compressor,
) -> Result<ChatTurn, HarnessError> {
    let prompt = session.render(message, compressor)?;
    let gen = generator.complete(&prompt.text, &session.settings.decoding)?;
    let reply = gen.text.trim().to_string();
    let tokenizer = TokenizerRegistry::default().get(&session.settings.tokenizer)?;
    let completion_tokens = tokenizer.count(&reply);
    let n = session.transcript.len();
    session.transcript.push(utterance(Speaker::P1, message, n));
    session.transcript.push(utterance(Speaker::P2, &reply, n + 1));
    Ok(ChatTurn { reply, prompt, completion_tokens })
}

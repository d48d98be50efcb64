use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::compressor::similarity::fnv1a64;
use crate::compressor::{CompressedContext, Compressor, HistoryRepresentation};
use crate::corpus::{build_corpus_instances, Conversation, Instance, Utterance};

use super::PromptError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ExemplarOrigin {
    /// The instance's own conversation, one turn earlier.
    Shifted,
    /// Drawn from another conversation.
    Random { conversation_id: String, pool_index: usize },
}

/// A solved example for few-shot prompts, compressed with the same
/// representation as the main input.
#[derive(Debug, Clone, PartialEq)]
pub struct Exemplar {
    pub instance: Instance,
    pub context: CompressedContext,
    pub origin: ExemplarOrigin,
}

fn swap(u: &Utterance) -> Utterance {
    Utterance {
        speaker: u.speaker.other(),
        ..u.clone()
    }
}

/// The same conversation one turn earlier: the current utterance becomes
/// the response to the last history utterance. Speakers and background
/// are swapped so the exemplar still asks for Person2's reply to Person1.
/// `None` with fewer than two prior turns.
pub fn shifted_instance(instance: &Instance) -> Option<Instance> {
    let n = instance.history.len();
    if n < 2 {
        return None;
    }
    let target = swap(&instance.current);
    Some(Instance {
        conversation_id: instance.conversation_id.clone(),
        history: instance.history[..n - 1].iter().map(swap).collect(),
        current: swap(&instance.history[n - 1]),
        origin_session: target.session,
        target,
        background: instance.background.as_ref().map(|b| b.swapped()),
    })
}

/// Candidate instances for the random fallback.
#[derive(Debug, Clone, Default)]
pub struct ExemplarPool {
    instances: Vec<Instance>,
}

impl ExemplarPool {
    pub fn new(instances: Vec<Instance>) -> Self {
        ExemplarPool { instances }
    }

    pub fn from_conversations(convs: &[Conversation]) -> Result<Self, PromptError> {
        build_corpus_instances(convs)
            .map(ExemplarPool::new)
            .map_err(|e| PromptError::Parse(e.to_string()))
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    /// Uniform draw among instances from other conversations. The generator
    /// is seeded from `seed` and the instance key, so the draw does not
    /// depend on the order in which instances are processed.
    pub fn draw(&self, instance: &Instance, seed: u64) -> Result<(usize, &Instance), PromptError> {
        let eligible: Vec<usize> = (0..self.instances.len())
            .filter(|&i| self.instances[i].conversation_id != instance.conversation_id)
            .collect();
        if eligible.is_empty() {
            return Err(PromptError::EmptyCorpus);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fnv1a64(instance.key().as_bytes()));
        let i = eligible[rng.gen_range(0..eligible.len())];
        Ok((i, &self.instances[i]))
    }
}

/// Shifted exemplar when the instance has enough history, otherwise a
/// seeded random one from the pool.
pub fn select_exemplar(
    instance: &Instance,
    pool: &ExemplarPool,
    rep: &HistoryRepresentation,
    compressor: &Compressor,
    seed: u64,
) -> Result<Exemplar, PromptError> {
    let (ex, origin) = match shifted_instance(instance) {
        Some(ex) => (ex, ExemplarOrigin::Shifted),
        None => {
            let (i, ex) = pool.draw(instance, seed)?;
            let origin = ExemplarOrigin::Random {
                conversation_id: ex.conversation_id.clone(),
                pool_index: i,
            };
            (ex.clone(), origin)
        }
    };
    let context = compressor.compress_instance(&ex, rep)?;
    Ok(Exemplar {
        instance: ex,
        context,
        origin,
    })
}

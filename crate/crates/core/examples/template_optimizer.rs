// Choose among template paraphrases by mean perplexity under a scoring
// model. The stub model here penalizes long words, so the plainest
// wording wins.

use std::sync::Arc;

use frugal_prompt::client::stub::{StubCompletion, StubLlm, StubLogprobs};
use frugal_prompt::client::{EndpointConfig, LlmClient};
use frugal_prompt::compressor::{Compressor, HistoryRepresentation};
use frugal_prompt::corpus::build_corpus_instances;
use frugal_prompt::harness::{synthetic_conversations, SyntheticSpec};
use frugal_prompt::optimizer::{sample_validation, select_best, CandidateSet, Provenance, ScoringSetup};
use frugal_prompt::prompt::{perplexity_summary_template, ExemplarPool, Segment};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let base = perplexity_summary_template();
    let mut wordy = base.clone();
    wordy.id = "ppl-wordy".into();
    wordy.segments[0] = Segment::lit(
        "Hereinafter is an abridgement of the aforementioned conversation between Person1 and Person2: ",
    );
    let mut plain = base.clone();
    plain.id = "ppl-plain".into();
    plain.segments[0] = Segment::lit("A summary of the chat so far: ");

    let mut set = CandidateSet::new(base);
    set.push(wordy, Provenance::Paraphrase)?;
    set.push(plain, Provenance::BackTranslation)?;

    let lp = StubLogprobs::PerToken(Arc::new(|tok: &str, _| -(tok.trim().len() as f64) / 4.0));
    let transport = Arc::new(StubLlm::new(StubCompletion::EchoFirst(1)).with_logprobs(lp));
    let mut cfg = EndpointConfig::new("stub://", "scorer-lm");
    cfg.logprobs = true;
    let llm = LlmClient::new(cfg, transport);

    let convs = synthetic_conversations(&SyntheticSpec { conversations: 6, turns: 6, seed: 3, persona: false });
    let instances = build_corpus_instances(&convs)?;
    let sample = sample_validation(&instances, 10, 42);
    let comp = Compressor::offline();
    let pool = ExemplarPool::new(instances.clone());
    let setup = ScoringSetup::new(&comp, &pool);
    let rep = HistoryRepresentation::Summary("pegasus-ds".into());

    let sel = select_best(&set, &sample, &rep, &llm, &setup)?;
    for s in &sel.scores {
        println!("{:<28} ppl={:.4} n={}", s.template_id, s.mean_perplexity, s.n_instances);
    }
    println!("selected {} ({:?})", sel.best.id, sel.provenance);
    assert_eq!(sel.best.id, "ppl-plain");
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().unwrap();
}

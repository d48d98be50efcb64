// Talk to the scorer service: summarize, embed, score and health, here
// against the in-process deterministic test mode.

use frugal_prompt::client::scorer::{ScorePair, ScorerClient, SpeakerTurn, SummarizeRequest};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let scorer = ScorerClient::offline();
    let health = scorer.health()?;
    println!("status {} models {:?}", health.status, health.loaded_models);

    let summary = scorer.summarize(&SummarizeRequest {
        summarizer: "pegasus-ds".into(),
        utterances: vec![
            SpeakerTurn { speaker: "Person1".into(), text: "I moved to Lisbon.".into() },
            SpeakerTurn { speaker: "Person2".into(), text: "How is the weather?".into() },
        ],
    })?;
    println!("summary {:?} ({})", summary.summary, summary.model_version);

    let emb = scorer.embed("simcse", &["a cat".to_string(), "a dog".to_string()])?;
    println!("{} vectors of dim {}", emb.vectors.len(), emb.dim);

    let scores = scorer.score(
        "bleurt",
        &[ScorePair { context: String::new(), candidate: "hi there".into(), reference: "hello there".into() }],
    )?;
    println!("bleurt {scores:?}");
    assert_eq!(emb.vectors.len(), 2);
    assert_eq!(scores.len(), 1);
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().unwrap();
}

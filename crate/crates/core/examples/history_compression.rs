// Compress one dialog history four ways and compare the token cost.

use frugal_prompt::compressor::{Compressor, HistoryRepresentation};
use frugal_prompt::corpus::{build_instances, Conversation, DatasetKind};
use frugal_prompt::tokenize::measure_length;

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let conv = Conversation::from_texts(
        "demo",
        DatasetKind::Generic,
        &[
            "I just adopted a puppy last week.",
            "Congratulations! What breed is it?",
            "A beagle. He chews everything in the house.",
            "Beagles are energetic. Have you tried puzzle toys?",
            "Not yet, but my sister recommended some.",
            "They helped my dog a lot when she was young.",
            "Do you think obedience classes are worth it?",
            "Absolutely, especially for a curious beagle.",
        ],
    );
    let inst = build_instances(&conv)?.pop().ok_or("no instance")?;
    let comp = Compressor::offline();
    let reps = ["full", "recent:2", "semantic:2", "summary:pegasus-ds"];
    let mut full = 0;
    for r in reps {
        let rep: HistoryRepresentation = r.parse()?;
        let ctx = comp.compress_instance(&inst, &rep)?;
        let text = ctx.history_text();
        let n = measure_length(&text, "whitespace")?;
        if rep == HistoryRepresentation::Full {
            full = n;
        }
        println!("{:<20} {n:>3} tokens | {}", rep.label(), text.replace('\n', " / "));
        assert!(n <= full, "{r} is longer than the full history");
    }
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().unwrap();
}

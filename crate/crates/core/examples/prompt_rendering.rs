// Render zero- and few-shot prompts from the built-in catalog and show
// where the tokens go.

use frugal_prompt::compressor::{Compressor, HistoryRepresentation};
use frugal_prompt::corpus::{build_corpus_instances, BackgroundInfo, Conversation, DatasetKind};
use frugal_prompt::prompt::{manual_template, render_prompt, select_exemplar, ExemplarPool, ShotMode};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let convs = vec![
        Conversation::from_texts(
            "a",
            DatasetKind::Generic,
            &["Hi! Any plans today?", "Gardening, the tomatoes are ready.", "Nice, I only grow herbs.", "Basil is my favourite."],
        )
        .with_background(BackgroundInfo::persona("I live in a flat.", "I have a big garden.")),
        Conversation::from_texts(
            "b",
            DatasetKind::Generic,
            &["Did you watch the match?", "Yes, what a finish!", "I nearly cried.", "Same here."],
        )
        .with_background(BackgroundInfo::persona("I play football.", "I coach kids.")),
    ];
    let instances = build_corpus_instances(&convs)?;
    let pool = ExemplarPool::new(instances.clone());
    let comp = Compressor::offline();
    let rep = HistoryRepresentation::RecentK(2);
    let inst = &instances[1];
    let ctx = comp.compress_instance(inst, &rep)?;
    let bg = inst.background.as_ref().map(|b| b.kind);

    let zs = render_prompt(&manual_template(ShotMode::ZeroShot, Some(&rep), bg), inst, &ctx, None)?;
    let ex = select_exemplar(inst, &pool, &rep, &comp, 0)?;
    let fs = render_prompt(&manual_template(ShotMode::FewShot, Some(&rep), bg), inst, &ctx, Some(&ex))?;

    println!("--- {} ({} tokens)\n{}\n", zs.template_id, zs.total_tokens, zs.text);
    println!("--- {} ({} tokens, exemplar {:?})\n{}\n", fs.template_id, fs.total_tokens, ex.origin, fs.text);
    for (slot, n) in &fs.component_lengths {
        println!("{:>12} {n}", slot.name());
    }
    assert!(fs.total_tokens >= zs.total_tokens);
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().unwrap();
}

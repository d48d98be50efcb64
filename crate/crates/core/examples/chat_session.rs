// A scripted chat against the stub endpoint, switching history
// compression mid-conversation and printing the per-turn token budget.

use std::sync::Arc;

use frugal_prompt::client::stub::{StubCompletion, StubLlm};
use frugal_prompt::client::{EndpointConfig, LlmClient};
use frugal_prompt::compressor::{Compressor, HistoryRepresentation};
use frugal_prompt::corpus::BackgroundInfo;
use frugal_prompt::harness::{chat_turn, ChatSession, ChatSettings};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let llm = LlmClient::new(
        EndpointConfig::new("stub://", "chat-stub"),
        Arc::new(StubLlm::new(StubCompletion::EchoLast(4))),
    );
    let comp = Compressor::offline();
    let mut session = ChatSession::new("demo", ChatSettings::default())
        .with_background(BackgroundInfo::persona("I like jazz.", "I play the saxophone."));

    let mut budgets = Vec::new();
    for (i, msg) in ["Hi!", "Do you perform anywhere?", "Which clubs?", "Can I come next Friday?"].iter().enumerate() {
        if i == 2 {
            session.set_representation(HistoryRepresentation::Full);
            println!("[switched to full history]");
        }
        let turn = chat_turn(&mut session, msg, &llm, &comp)?;
        println!("P1: {msg}\nP2: {}  [{} tokens]", turn.reply, turn.total_tokens());
        budgets.push(turn.prompt.total_tokens);
    }
    assert_eq!(session.transcript.len(), 8);
    assert!(budgets[3] > budgets[1]);
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().unwrap();
}

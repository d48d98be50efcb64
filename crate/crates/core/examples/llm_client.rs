// The endpoint client: retries with backoff on transient failures, caches
// responses, and reports usage.

use std::sync::Arc;

use frugal_prompt::client::stub::ScriptedTransport;
use frugal_prompt::client::{DecodingParams, EndpointConfig, LlmClient, TransportError};
use serde_json::json;

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let ok = json!({
        "choices": [{"text": " Sounds great, see you there."}],
        "usage": {"prompt_tokens": 12, "completion_tokens": 5}
    });
    let transport = Arc::new(ScriptedTransport::new([
        Err(TransportError::status(429, "slow down")),
        Err(TransportError::Timeout),
        Ok(ok),
    ]));
    let client = LlmClient::new(EndpointConfig::new("stub://", "demo-model"), transport.clone())
        .with_sleeper(|d| println!("  backing off {} ms", d.as_millis()));

    let params = DecodingParams::default();
    let first = client.complete("Person1: Lunch tomorrow?\nPerson2:", &params)?;
    let again = client.complete("Person1: Lunch tomorrow?\nPerson2:", &params)?;
    println!("reply={:?} cached={} then cached={}", first.text, first.cached, again.cached);
    for a in client.attempt_log() {
        println!("  attempt {} -> {} (delay {} ms)", a.attempt, a.outcome, a.delay_ms);
    }
    let u = client.usage();
    println!("network calls {}, cache hits {}", u.network_calls, u.cache_hits);
    assert_eq!((u.network_calls, u.cache_hits), (3, 1));
    assert_eq!(transport.sent()[0].0, "/v1/completions");
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().unwrap();
}

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use frugal_prompt::client::replay::ReplayTransport;
use frugal_prompt::client::scorer::{ScorePair, ScorerClient, SpeakerTurn, SummarizeRequest};
use frugal_prompt::client::stub::{ScriptedTransport, StubCompletion, StubLlm};
use frugal_prompt::client::{
    ApiStyle, ClientError, DecodingParams, DiskCache, EndpointConfig, HttpTransport, LlmClient, LogprobModel,
    RetryPolicy, Transport, TransportError,
};
use frugal_prompt::metrics::{remote_score, MetricId, MetricsError, PairInput};
use serde_json::{json, Value};

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn completion(text: &str) -> Value {
    json!({ "choices": [{ "text": text }], "usage": { "prompt_tokens": 3, "completion_tokens": 1 } })
}

fn no_sleep(cfg: EndpointConfig, t: Arc<dyn Transport>) -> (LlmClient, Arc<Mutex<Vec<u64>>>) {
    let slept = Arc::new(Mutex::new(Vec::new()));
    let s = slept.clone();
    let client = LlmClient::new(cfg, t).with_sleeper(move |d| s.lock().unwrap().push(d.as_millis() as u64));
    (client, slept)
}

#[test]
fn retries_transient_failures_with_backoff() {
    let t = Arc::new(ScriptedTransport::new([
        Err(TransportError::status(503, "busy")),
        Err(TransportError::Timeout),
        Err(TransportError::Io("reset".into())),
        Ok(completion("ok")),
    ]));
    let (client, slept) = no_sleep(EndpointConfig::new("stub://", "m"), t.clone());
    let r = client.complete("hello", &DecodingParams::default()).unwrap();
    assert_eq!(r.text, "ok");
    assert_eq!(*slept.lock().unwrap(), [500, 1000, 2000]);
    assert_eq!(client.usage().network_calls, 4);
    assert_eq!(t.sent().len(), 4);
}

#[test]
fn retry_after_header_extends_the_wait() {
    let t = Arc::new(ScriptedTransport::new([
        Err(TransportError::Status { status: 429, body: String::new(), retry_after_ms: Some(7000) }),
        Ok(completion("ok")),
    ]));
    let (client, slept) = no_sleep(EndpointConfig::new("stub://", "m"), t);
    client.complete("x", &DecodingParams::default()).unwrap();
    assert_eq!(*slept.lock().unwrap(), [7000]);
}

#[test]
fn gives_up_after_max_attempts() {
    let mut cfg = EndpointConfig::new("stub://", "m");
    cfg.retry = RetryPolicy { max_attempts: 3, backoff_base_ms: 10, max_backoff_ms: 15 };
    let t = Arc::new(ScriptedTransport::new((0..5).map(|_| Err(TransportError::status(429, "")))));
    let (client, slept) = no_sleep(cfg, t);
    let err = client.complete("x", &DecodingParams::default()).unwrap_err();
    assert_eq!(err, ClientError::RateLimited { attempts: 3 });
    assert_eq!(*slept.lock().unwrap(), [10, 15]);
}

#[test]
fn client_errors_are_not_retried() {
    let t = Arc::new(ScriptedTransport::new([Err(TransportError::status(400, "bad")), Ok(completion("never"))]));
    let (client, slept) = no_sleep(EndpointConfig::new("stub://", "m"), t.clone());
    let err = client.complete("x", &DecodingParams::default()).unwrap_err();
    assert_eq!(err.http_status(), Some(400));
    assert!(slept.lock().unwrap().is_empty());
    assert_eq!(t.sent().len(), 1);
}

#[test]
fn identical_requests_hit_the_cache() {
    let stub = Arc::new(StubLlm::new(StubCompletion::Fixed("hey".into())));
    let client = LlmClient::new(EndpointConfig::new("stub://", "m"), stub.clone());
    let p = DecodingParams::default();
    let a = client.complete("same prompt", &p).unwrap();
    let b = client.complete("same prompt", &p).unwrap();
    let c = client.complete("other prompt", &p).unwrap();
    assert!(!a.cached && b.cached && !c.cached);
    assert_eq!(a.text, b.text);
    assert_eq!(stub.calls(), 2);
    let u = client.usage();
    assert_eq!((u.network_calls, u.cache_hits), (2, 1));
}

#[test]
fn disk_cache_survives_a_new_client() {
    let dir = tempfile::tempdir().unwrap();
    let p = DecodingParams::default();
    let first = {
        let stub = Arc::new(StubLlm::new(StubCompletion::EchoFirst(2)));
        let c = LlmClient::new(EndpointConfig::new("stub://", "m"), stub)
            .with_cache(Arc::new(DiskCache::open(dir.path()).unwrap()));
        c.complete("one two three", &p).unwrap()
    };
    let stub = Arc::new(StubLlm::new(StubCompletion::EchoFirst(2)));
    let c = LlmClient::new(EndpointConfig::new("stub://", "m"), stub.clone())
        .with_cache(Arc::new(DiskCache::open(dir.path()).unwrap()));
    let second = c.complete("one two three", &p).unwrap();
    assert_eq!(first.text, second.text);
    assert!(second.cached);
    assert_eq!(stub.calls(), 0);
}

#[test]
fn concurrency_is_bounded_by_max_parallel() {
    let stub = Arc::new(StubLlm::new(StubCompletion::EchoFirst(1)).with_delay(Duration::from_millis(20)));
    let mut cfg = EndpointConfig::new("stub://", "m");
    cfg.max_parallel = 3;
    let client = LlmClient::new(cfg, stub.clone());
    thread::scope(|s| {
        for i in 0..12 {
            let client = &client;
            s.spawn(move || client.complete(&format!("prompt {i}"), &DecodingParams::default()).unwrap());
        }
    });
    assert_eq!(stub.calls(), 12);
    assert!(stub.peak_in_flight() <= 3, "peak {}", stub.peak_in_flight());
    assert!(stub.peak_in_flight() >= 2);
}

#[test]
fn concurrent_identical_requests_go_out_once() {
    let stub = Arc::new(StubLlm::new(StubCompletion::EchoFirst(1)).with_delay(Duration::from_millis(20)));
    let client = LlmClient::new(EndpointConfig::new("stub://", "m"), stub.clone());
    thread::scope(|s| {
        for _ in 0..8 {
            s.spawn(|| client.complete("same", &DecodingParams::default()).unwrap());
        }
    });
    assert_eq!(stub.calls(), 1);
    assert_eq!(client.usage().cache_hits, 7);
}

#[test]
fn logprobs_require_capability() {
    let client = LlmClient::new(EndpointConfig::new("stub://", "chat-only"), Arc::new(StubLlm::default()));
    assert_eq!(
        client.token_logprobs("x").unwrap_err(),
        ClientError::LogprobsUnsupported("chat-only".into())
    );
}

#[test]
fn completions_wire_replay() {
    let t = Arc::new(ReplayTransport::from_file(fixture("completions_replay.json")).unwrap());
    let mut cfg = EndpointConfig::new("replay://", "flan-t5-xl");
    cfg.logprobs = true;
    let client = LlmClient::new(cfg.clone(), t.clone());
    let lps = client.token_logprobs("Person1: hi\nPerson2:").unwrap();
    assert_eq!(lps.len(), 3);
    assert_eq!(lps[0].logprob, None);
    assert_eq!(lps[2].logprob, Some(-1.5));

    cfg.api = ApiStyle::Chat;
    let chat = LlmClient::new(cfg, t.clone());
    let params = DecodingParams { temperature: 0.7, max_tokens: 64, stop: vec![] };
    let r = chat.complete("Person1: hi\nPerson2:", &params).unwrap();
    assert_eq!((r.text.as_str(), r.prompt_tokens, r.completion_tokens), (" Hello!", 4, 1));
    assert_eq!(t.remaining(), 0);
}

#[test]
fn scorer_wire_replay() {
    let t = Arc::new(ReplayTransport::from_file(fixture("scorer_replay.json")).unwrap());
    let scorer = ScorerClient::new(t.clone());

    let h = scorer.health().unwrap();
    assert_eq!(h.status, "ok");
    assert_eq!(h.loaded_models.len(), 4);

    let s = scorer
        .summarize(&SummarizeRequest {
            summarizer: "pegasus-ds".into(),
            utterances: vec![
                SpeakerTurn { speaker: "Person1".into(), text: "I adopted a beagle.".into() },
                SpeakerTurn { speaker: "Person2".into(), text: "Does he chew things?".into() },
            ],
        })
        .unwrap();
    assert_eq!(s.model_version, "pegasus-ds-v1");

    let e = scorer.embed("simcse", &["a cat".into(), "a dog".into()]).unwrap();
    assert_eq!((e.vectors.len(), e.dim), (2, 3));

    let pair = |c: &str| PairInput {
        pair_ref: c.into(),
        pair: ScorePair { context: "Person1: hi".into(), candidate: c.into(), reference: "hi there".into() },
    };
    let scores = remote_score(&MetricId::Bleurt, &[pair("hello"), pair("hey")], &scorer).unwrap();
    assert_eq!(scores.iter().map(|s| s.value).collect::<Vec<_>>(), [0.41, 0.37]);
    assert_eq!(scores[1].pair_ref, "hey");

    let unknown = PairInput {
        pair_ref: "x".into(),
        pair: ScorePair { context: String::new(), candidate: "a".into(), reference: "b".into() },
    };
    let err = remote_score(&MetricId::Custom("rouge".into()), &[unknown], &scorer).unwrap_err();
    assert!(matches!(err, MetricsError::UnknownMetric(_)), "{err:?}");
    assert_eq!(t.remaining(), 0);
}

#[test]
fn replay_rejects_unrecorded_requests() {
    let t = Arc::new(ReplayTransport::from_file(fixture("scorer_replay.json")).unwrap());
    let scorer = ScorerClient::new(t);
    assert!(matches!(scorer.embed("simcse", &["x".into()]), Err(ClientError::Decode(_))));
}

#[test]
fn offline_scorer_validates_like_the_service() {
    let scorer = ScorerClient::offline();
    let pair = ScorePair { context: String::new(), candidate: "a".into(), reference: "b".into() };
    assert_eq!(scorer.score("deb", &[pair.clone()]).unwrap_err().http_status(), Some(422));
    assert_eq!(scorer.score("nope", &[pair]).unwrap_err().http_status(), Some(404));
    let bad = SummarizeRequest {
        summarizer: "bart-d".into(),
        utterances: vec![SpeakerTurn { speaker: "Alice".into(), text: "hi".into() }],
    };
    assert_eq!(scorer.summarize(&bad).unwrap_err().http_status(), Some(422));
    assert_eq!(scorer.embed("simcse", &[]).unwrap_err(), ClientError::EmptyBatch);
}

struct Captured {
    request_line: String,
    headers: Vec<(String, String)>,
    body: String,
}

/// Serves one canned HTTP response per connection and records requests.
fn serve(responses: Vec<String>) -> (String, thread::JoinHandle<Vec<Captured>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = format!("http://{}", listener.local_addr().unwrap());
    let handle = thread::spawn(move || {
        let mut seen = Vec::new();
        for resp in responses {
            let (mut stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut request_line = String::new();
            reader.read_line(&mut request_line).unwrap();
            let mut headers = Vec::new();
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let line = line.trim_end();
                if line.is_empty() {
                    break;
                }
                let (k, v) = line.split_once(':').unwrap();
                headers.push((k.trim().to_ascii_lowercase(), v.trim().to_string()));
            }
            let len = headers
                .iter()
                .find(|(k, _)| k == "content-length")
                .map(|(_, v)| v.parse::<usize>().unwrap())
                .unwrap_or(0);
            let mut body = vec![0; len];
            reader.read_exact(&mut body).unwrap();
            stream.write_all(resp.as_bytes()).unwrap();
            stream.flush().unwrap();
            seen.push(Captured {
                request_line: request_line.trim_end().to_string(),
                headers,
                body: String::from_utf8(body).unwrap(),
            });
        }
        seen
    });
    (addr, handle)
}

fn http(status: &str, extra: &str, body: &str) -> String {
    format!(
        "HTTP/1.1 {status}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n{extra}\r\n{body}",
        body.len()
    )
}

#[test]
fn http_transport_round_trip() {
    let (url, server) = serve(vec![
        http("503 Service Unavailable", "Retry-After: 0\r\n", "{}"),
        http("200 OK", "", &completion("hi from http").to_string()),
    ]);
    std::env::set_var("FP_TEST_HTTP_KEY", "sekret");
    let mut cfg = EndpointConfig::new(url, "gpt-test");
    cfg.api_key_env = Some("FP_TEST_HTTP_KEY".into());
    cfg.timeout_ms = 5_000;
    let (client, slept) = no_sleep(cfg.clone(), Arc::new(HttpTransport::from_endpoint(&cfg)));
    let r = client.complete("Person1: hi\nPerson2:", &DecodingParams::default()).unwrap();
    assert_eq!(r.text, "hi from http");
    assert_eq!(slept.lock().unwrap().len(), 1);

    let seen = server.join().unwrap();
    assert_eq!(seen.len(), 2);
    assert_eq!(seen[1].request_line, "POST /v1/completions HTTP/1.1");
    assert!(seen[1].headers.contains(&("authorization".into(), "Bearer sekret".into())));
    let body: Value = serde_json::from_str(&seen[1].body).unwrap();
    assert_eq!(body["model"], "gpt-test");
    assert_eq!(body["prompt"], "Person1: hi\nPerson2:");
    assert_eq!(body["max_tokens"], 128);
}

#[test]
fn http_scorer_health_and_errors() {
    let (url, server) = serve(vec![
        http("200 OK", "", r#"{"status":"ok","loaded_models":["bleurt"]}"#),
        http("404 Not Found", "", r#"{"error":"unknown metric"}"#),
    ]);
    let scorer = ScorerClient::new(Arc::new(HttpTransport::new(url, None, Duration::from_secs(5))));
    assert_eq!(scorer.health().unwrap().loaded_models, ["bleurt"]);
    let pair = ScorePair { context: String::new(), candidate: "a".into(), reference: "b".into() };
    assert_eq!(scorer.score("x", &[pair]).unwrap_err().http_status(), Some(404));
    let seen = server.join().unwrap();
    assert_eq!(seen[0].request_line, "GET /health HTTP/1.1");
    assert!(seen[1].request_line.starts_with("POST /score"));
    assert!(seen.iter().all(|c| !c.headers.iter().any(|(k, _)| k == "authorization")));
}

#[test]
fn http_connection_refused_is_io() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let t = HttpTransport::new(format!("http://127.0.0.1:{port}"), None, Duration::from_secs(2));
    assert!(matches!(t.post_json("/score", &json!({})), Err(TransportError::Io(_))));
}

#[test]
fn logprob_model_trait_object() {
    let mut cfg = EndpointConfig::new("stub://", "m");
    cfg.logprobs = true;
    let client = LlmClient::new(cfg, Arc::new(StubLlm::default()));
    let model: &dyn LogprobModel = &client;
    let lps = model.token_logprobs("a b c").unwrap();
    assert_eq!(lps.iter().map(|t| t.token.as_str()).collect::<String>(), "a b c");
}

//! Acceptance suite. Prints one PASS/FAIL line per criterion and fails if
//! any criterion fails. Every check compares library output against an
//! oracle computed here, independently of the code under test.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use frugal_prompt::client::stub::{StubCompletion, StubLlm, StubLogprobs};
use frugal_prompt::client::{ClientError, EndpointConfig, LlmClient, LogprobModel, TokenLogprob};
use frugal_prompt::compressor::{
    recent_k, semantic_k, CompressedContext, Compressor, Embedder, HashEmbedder, HistoryRepresentation,
};
use frugal_prompt::corpus::{build_corpus_instances, read_conversations, Instance, Speaker, Utterance};
use frugal_prompt::metrics::{meteor, uid};
use frugal_prompt::optimizer::{
    scoring_text, select_best, score_template, CandidateSet, Provenance, ScoringSetup,
};
use frugal_prompt::prompt::{
    manual_template, perplexity_summary_template, render_prompt, select_exemplar, ExemplarOrigin, ExemplarPool,
    Segment, ShotMode, SUPPORTED_K,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn timed(limit: Option<Duration>, f: impl FnOnce() -> Outcome) -> Outcome {
    let start = Instant::now();
    let detail = f()?;
    let took = start.elapsed();
    if let Some(limit) = limit {
        ensure!(took < limit, "took {took:?}, limit {limit:?}");
    }
    Ok(format!("{detail}; {:.3}s", took.as_secs_f64()))
}

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn utt(speaker: Speaker, text: &str, index: usize) -> Utterance {
    Utterance { speaker, text: text.to_string(), index, session: None }
}

fn normalize_ws(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

const VOCAB: [&str; 24] = [
    "cat", "dog", "the", "a", "sat", "ran", "park", "music", "coffee", "rain", "beach", "book", "movie", "we", "you",
    "love", "hate", "today", "never", "garden", "car", "fast", "slow", "home",
];

fn random_sentence(rng: &mut ChaCha8Rng, max_words: usize) -> String {
    let n = rng.gen_range(1..=max_words);
    (0..n).map(|_| VOCAB[rng.gen_range(0..VOCAB.len())]).collect::<Vec<_>>().join(" ")
}

// ---------------------------------------------------------------- UID

fn uid_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0f64;
    for _ in 0..1000 {
        let m: f64 = rng.gen_range(0.01..1.0);
        let l: f64 = rng.gen_range(1.0..5000.0);
        let a1: f64 = rng.gen_range(0.05..10.0);
        let a3: f64 = rng.gen_range(0.05..10.0);

        let at1 = uid(m, l, 1.0).map_err(|e| e.to_string())?;
        ensure!(at1 == m / l, "uid(M,L,1) = {at1} != M/L = {}", m / l);

        let dm = m * 1.05;
        let up = uid(dm, l, a1).unwrap();
        ensure!(up > uid(m, l, a1).unwrap(), "not increasing in M at ({m},{l},{a1})");
        ensure!(uid(m, l * 1.05, a1).unwrap() < uid(m, l, a1).unwrap(), "not decreasing in L at ({m},{l},{a1})");

        let lhs = uid(m, l, a1).unwrap() * uid(m, l, a3).unwrap();
        let mid = uid(m, l, (a1 + a3) / 2.0).unwrap();
        let rhs = mid * mid;
        let rel = ((lhs - rhs) / rhs).abs();
        worst = worst.max(rel);
        ensure!(rel <= 1e-12, "log-linearity off by {rel:e} at ({m},{l},{a1},{a3})");
    }
    Ok(format!("1000 triples, worst relative log-linearity error {worst:.1e}"))
}

// ---------------------------------------------------------- selection

fn embedders() -> Vec<Arc<dyn Embedder>> {
    vec![Arc::new(HashEmbedder::salted("h-simcse", "simcse")), Arc::new(HashEmbedder::salted("h-st", "st"))]
}

fn oracle_cosine(v: &[f32], w: &[f32]) -> f64 {
    let dot: f64 = v.iter().zip(w).map(|(x, y)| *x as f64 * *y as f64).sum();
    let n = |u: &[f32]| u.iter().map(|x| (*x as f64) * (*x as f64)).sum::<f64>().sqrt();
    dot / (n(v) * n(w))
}

/// Scores every utterance on its own, sorts by score (earlier wins ties)
/// and returns the top k in chronological order.
fn semantic_oracle(history: &[Utterance], current: &Utterance, k: usize, emb: &[Arc<dyn Embedder>]) -> Vec<usize> {
    let one = |e: &Arc<dyn Embedder>, t: &str| e.embed(&[t.to_string()]).unwrap().remove(0);
    let mut scored: Vec<(f64, usize)> = history
        .iter()
        .enumerate()
        .map(|(i, u)| {
            let s: f64 = emb.iter().map(|e| oracle_cosine(&one(e, &u.text), &one(e, &current.text))).sum();
            (s / emb.len() as f64, i)
        })
        .collect();
    scored.sort_by(|x, y| y.0.partial_cmp(&x.0).unwrap().then(x.1.cmp(&y.1)));
    let mut top: Vec<usize> = scored.into_iter().take(k).map(|(_, i)| i).collect();
    top.sort_unstable();
    top
}

fn selection_oracles() -> Outcome {
    let emb = embedders();
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for case in 0..200 {
        let n = rng.gen_range(1..=16);
        let history: Vec<Utterance> = (0..n)
            .map(|i| utt(if i % 2 == 0 { Speaker::P1 } else { Speaker::P2 }, &random_sentence(&mut rng, 8), i))
            .collect();
        let current = utt(Speaker::P1, &random_sentence(&mut rng, 8), n);
        let k = rng.gen_range(1..=10);
        let got: Vec<usize> = semantic_k(&history, &current, k, &emb)
            .map_err(|e| e.to_string())?
            .iter()
            .map(|u| u.index)
            .collect();
        let want = semantic_oracle(&history, &current, k, &emb);
        ensure!(got == want, "fixture {case}: semantic_k({k}) = {got:?}, oracle {want:?}");

        for &k in &SUPPORTED_K {
            let r = recent_k(&history, k);
            ensure!(r.len() == k.min(n), "fixture {case}: recent_{k} has {} of {n}", r.len());
            ensure!(history.ends_with(&r), "fixture {case}: recent_{k} is not a suffix");
            if k >= n {
                ensure!(r == history, "fixture {case}: recent_{k} does not saturate");
            }
        }
    }
    Ok("200 semantic fixtures match the sort oracle; recent-k suffix/saturation for k in 1,2,4,8,10".into())
}

// ----------------------------------------------------------- exemplar

const GOLDEN_FS_RECENT4: &str = "Automated Chat System:
Learn from the below example on how to generate consistent and diverse responses between Person1 and Person2 given list of recent-4 utterances. Example:
This is a list of recent-4 utterances of a dialog exchange between Person1 and Person2: Person1: A
Person2: B
Person1: C
Person2: D
Given the list of recent-4 utterances of the dialog exchange between Person1 and Person2, give a consistent and diverse response to the following dialog by Person1.
Person1: E
Person2: F
Now try it yourself:
This is a list of recent-4 utterances of a dialog exchange between Person1 and Person2: Person1: B
Person2: C
Person1: D
Person2: E
Given the list of recent-4 utterances of the dialog exchange between Person1 and Person2, give a consistent and diverse response to the following dialog by Person1.
Person1: F
Person2:";

fn exemplar_shift() -> Outcome {
    // A..G, G is the response; roles alternate backwards from it.
    let texts = ["A", "B", "C", "D", "E", "F", "G"];
    let speaker = |i: usize| if (6 - i) % 2 == 0 { Speaker::P2 } else { Speaker::P1 };
    let all: Vec<Utterance> = texts.iter().enumerate().map(|(i, t)| utt(speaker(i), t, i)).collect();
    let inst = Instance {
        conversation_id: "abc".into(),
        history: all[..5].to_vec(),
        current: all[5].clone(),
        target: all[6].clone(),
        background: None,
        origin_session: None,
    };
    let comp = Compressor::offline();
    let rep = HistoryRepresentation::RecentK(4);
    let pool = ExemplarPool::new(Vec::new());
    let ex = select_exemplar(&inst, &pool, &rep, &comp, 0).map_err(|e| e.to_string())?;
    ensure!(ex.origin == ExemplarOrigin::Shifted, "origin {:?}", ex.origin);
    ensure!(ex.instance.target.text == "F", "exemplar target {}", ex.instance.target.text);
    ensure!(ex.instance.current.text == "E", "exemplar current {}", ex.instance.current.text);
    let window: Vec<&str> = ex.context.selected.iter().map(|u| u.text.as_str()).collect();
    ensure!(window == ["A", "B", "C", "D"], "exemplar recent-4 {window:?}");

    let ctx = comp.compress_instance(&inst, &rep).map_err(|e| e.to_string())?;
    let t = manual_template(ShotMode::FewShot, Some(&rep), None);
    let p = render_prompt(&t, &inst, &ctx, Some(&ex)).map_err(|e| e.to_string())?;
    ensure!(p.text == GOLDEN_FS_RECENT4, "golden text differs:\n{}", p.text);
    Ok("exemplar = (target F, current E, recent-4 ABCD); golden prompt text matches".into())
}

// ---------------------------------------------------------- rendering

const TABLE1_SUMMARY: &str = "Person1 wants to go back to college to learn more about accounting. Person2 wants to study education so Person2 could teach art. Person1 thinks it's never too late for a career change.";
const TABLE1_UTTERANCE: &str = "I've been here five years. FIVE long years. It's not the most rewarding job but it's steady and reliable so I never really looked for anything else, but I'm starting to want a change.";
const TABLE1_PROMPT: &str = "Here is a summary of the conversation between Person1 and Person2: Person1 wants to go back to college to learn more about accounting. Person2 wants to study education so Person2 could teach art. Person1 thinks it's never too late for a career change.
Based on the dialog between the Person1 and the Person2 so far, try to anticipate what the Person2's response might be to the Person1's next statement.
Person1: I've been here five years. FIVE long years. It's not the most rewarding job but it's steady and reliable so I never really looked for anything else, but I'm starting to want a change.
Person2:";

fn prompt_rendering() -> Outcome {
    let inst = Instance {
        conversation_id: "table1".into(),
        history: vec![utt(Speaker::P1, "earlier turn", 0), utt(Speaker::P2, "earlier reply", 1)],
        current: utt(Speaker::P1, TABLE1_UTTERANCE, 2),
        target: utt(Speaker::P2, "I think you should look into a career change.", 3),
        background: None,
        origin_session: None,
    };
    let rep = HistoryRepresentation::Summary("pegasus-ds".into());
    let ctx = CompressedContext {
        kind: rep,
        selected: Vec::new(),
        summary_text: Some(TABLE1_SUMMARY.into()),
        bi_summary: None,
        source_length_tokens: 4,
        compressed_length_tokens: TABLE1_SUMMARY.split_whitespace().count(),
    };
    let p = render_prompt(&perplexity_summary_template(), &inst, &ctx, None).map_err(|e| e.to_string())?;
    ensure!(
        normalize_ws(&p.text) == normalize_ws(TABLE1_PROMPT),
        "table prompt differs:\n{}",
        p.text
    );

    let convs = read_conversations(fixture("persona_corpus.jsonl")).map_err(|e| e.to_string())?;
    let instances = build_corpus_instances(&convs).map_err(|e| e.to_string())?;
    let pool = ExemplarPool::new(instances.clone());
    let comp = Compressor::offline();
    let reps = ["full", "recent:1", "recent:2", "semantic:1", "summary:pegasus-ds"];
    let mut checked = 0;
    for r in reps {
        let rep: HistoryRepresentation = r.parse().unwrap();
        for bg in [None, Some(frugal_prompt::corpus::BackgroundKind::Persona)] {
            let zs_t = manual_template(ShotMode::ZeroShot, Some(&rep), bg);
            let fs_t = manual_template(ShotMode::FewShot, Some(&rep), bg);
            for inst in &instances {
                let ctx = comp.compress_instance(inst, &rep).map_err(|e| e.to_string())?;
                let ex = select_exemplar(inst, &pool, &rep, &comp, 5).map_err(|e| e.to_string())?;
                let zs = render_prompt(&zs_t, inst, &ctx, None).map_err(|e| e.to_string())?;
                let fs = render_prompt(&fs_t, inst, &ctx, Some(&ex)).map_err(|e| e.to_string())?;
                let (z, f) = (zs.text.split_whitespace().count(), fs.text.split_whitespace().count());
                ensure!(f >= z, "{} {r}: FS {f} < ZS {z}", inst.key());
                checked += 1;
            }
        }
    }
    Ok(format!("table prompt matches (whitespace-normalized); FS >= ZS on {checked} instance/template pairs"))
}

// ---------------------------------------------------------- optimizer

fn fnv(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3))
}

/// Scripted scorer: each token's log-probability is a fixed function of
/// its text; the first token has none.
struct Scripted;

impl LogprobModel for Scripted {
    fn model_id(&self) -> &str {
        "scripted"
    }
    fn token_logprobs(&self, text: &str) -> Result<Vec<TokenLogprob>, ClientError> {
        Ok(text
            .split_whitespace()
            .enumerate()
            .map(|(i, t)| TokenLogprob {
                token: t.to_string(),
                logprob: (i > 0).then(|| -((fnv(t) % 997) as f64) / 200.0),
            })
            .collect())
    }
}

fn perplexity_optimizer() -> Outcome {
    let comp = Compressor::offline();
    let convs = read_conversations(fixture("persona_corpus.jsonl")).map_err(|e| e.to_string())?;
    let instances = build_corpus_instances(&convs).map_err(|e| e.to_string())?;
    let pool = ExemplarPool::new(instances.clone());
    let setup = ScoringSetup::new(&comp, &pool);
    let rep = HistoryRepresentation::Summary("pegasus-ds".into());
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let mut ties = 0;
    for case in 0..20 {
        let base = perplexity_summary_template();
        let mut set = CandidateSet::new(base.clone());
        let n = rng.gen_range(1..=6);
        for j in 0..n {
            let mut t = base.clone();
            t.id = format!("cand-{case}-{j}");
            // occasionally an exact duplicate to exercise tie-breaking
            if rng.gen_bool(0.8) {
                t.segments[0] = Segment::lit(format!("{}: ", random_sentence(&mut rng, 10)));
            }
            set.push(t, Provenance::Paraphrase).map_err(|e| e.to_string())?;
        }
        let got = select_best(&set, &instances, &rep, &Scripted, &setup).map_err(|e| e.to_string())?;

        // exhaustive oracle
        let mut means = Vec::new();
        for t in &set.candidates {
            let mut total = 0.0;
            for inst in &instances {
                let text = scoring_text(t, inst, &rep, &setup).map_err(|e| e.to_string())?;
                let lps: Vec<f64> = Scripted.token_logprobs(&text).unwrap().iter().filter_map(|t| t.logprob).collect();
                total += (-lps.iter().sum::<f64>() / lps.len() as f64).exp();
            }
            means.push(total / instances.len() as f64);
        }
        let mut best = 0;
        for (i, m) in means.iter().enumerate() {
            if *m < means[best] {
                best = i;
            }
        }
        if means.iter().filter(|m| (**m - means[best]).abs() < 1e-12).count() > 1 {
            ties += 1;
        }
        ensure!(
            got.best.id == set.candidates[best].id,
            "set {case}: selected {}, oracle {}",
            got.best.id,
            set.candidates[best].id
        );
        for (s, m) in got.scores.iter().zip(&means) {
            ensure!((s.mean_perplexity - m).abs() <= 1e-9 * m, "set {case}: {} scored {} vs {m}", s.template_id, s.mean_perplexity);
        }
    }

    let mut cfg = EndpointConfig::new("stub://", "zero");
    cfg.logprobs = true;
    let zero = LlmClient::new(cfg, Arc::new(StubLlm::new(StubCompletion::EchoFirst(1)).with_logprobs(StubLogprobs::Constant(0.0))));
    let s = score_template(&perplexity_summary_template(), &instances, &rep, &zero, &setup).map_err(|e| e.to_string())?;
    ensure!(s.mean_perplexity == 1.0, "all-zero perplexity {}", s.mean_perplexity);
    Ok(format!("20 candidate sets match the exhaustive oracle ({ties} with ties); all-zero perplexity = 1.0"))
}

// ------------------------------------------------------------- METEOR

fn meteor_fixtures() -> Outcome {
    let self_match = meteor("the cat sat", "the cat sat");
    let want = 1.0 - 0.5 * (1.0f64 / 3.0).powi(3);
    ensure!((self_match - want).abs() <= 1e-9, "self-match {self_match}, want {want}");
    let perm = meteor("sat cat the", "the cat sat");
    ensure!((perm - 0.5).abs() <= 1e-9, "permutation {perm}, want 0.5");
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    for _ in 0..10_000 {
        let (c, r) = (random_sentence(&mut rng, 12), random_sentence(&mut rng, 12));
        let s = meteor(&c, &r);
        ensure!((0.0..=1.0).contains(&s), "meteor({c:?}, {r:?}) = {s}");
    }
    Ok(format!("self-match {self_match:.10}, permutation {perm:.10}; 10000 random pairs in [0,1]"))
}

// ------------------------------------------------------- end to end

const DRY_RUN: &str = r#"
name = "dry-run"
seed = 7
limit = 30

[corpus.synthetic]
conversations = 10
turns = 8

[[endpoints]]
id = "stub"
stub_completion = "echo-last:6"

[matrix]
representations = ["full", "recent:1", "recent:2", "semantic:1", "summary:pegasus-ds"]
shots = ["zs", "fs"]

[metrics]
a_values = [0.5, 1.0, 2.0, 5.0, 10.0]
"#;

fn fp(args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_fp")).args(args).output().map_err(|e| e.to_string())?;
    ensure!(out.status.success(), "fp {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn latest_records(store: &Path) -> Vec<Value> {
    let text = std::fs::read_to_string(store.join("records.jsonl")).unwrap();
    let mut by_id: BTreeMap<String, Value> = BTreeMap::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let v: Value = serde_json::from_str(line).unwrap();
        by_id.insert(v["record_id"].as_str().unwrap().to_string(), v);
    }
    by_id.into_values().collect()
}

fn read_csv(path: &Path) -> Vec<BTreeMap<String, String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    let headers = r.headers().unwrap().clone();
    r.records()
        .map(|row| headers.iter().zip(row.unwrap().iter()).map(|(h, v)| (h.to_string(), v.to_string())).collect())
        .collect()
}

struct GroupStats {
    n: usize,
    prompt: u64,
    completion: u64,
    meteor: Vec<f64>,
}

fn oracle_groups(records: &[Value]) -> BTreeMap<(String, String, String), GroupStats> {
    let mut g: BTreeMap<(String, String, String), GroupStats> = BTreeMap::new();
    for r in records {
        let key = (
            r["history_signal"].as_str().unwrap().to_string(),
            r["template_type"].as_str().unwrap().to_string(),
            r["shot"].as_str().unwrap().to_ascii_uppercase(),
        );
        let e = g.entry(key).or_insert(GroupStats { n: 0, prompt: 0, completion: 0, meteor: Vec::new() });
        e.n += 1;
        e.prompt += r["prompt_tokens"].as_u64().unwrap();
        e.completion += r["completion_tokens"].as_u64().unwrap();
        e.meteor.push(r["scores"]["METEOR"].as_f64().unwrap());
    }
    g
}

fn bits_eq(field: &str, got: &str, want: f64) -> Result<(), String> {
    let g: f64 = got.parse().map_err(|_| format!("{field}: {got:?} is not a number"))?;
    ensure!(g.to_bits() == want.to_bits(), "{field}: report {g:?} vs oracle {want:?}");
    Ok(())
}

fn dry_run_dir() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("run.toml"), DRY_RUN).unwrap();
    dir
}

fn end_to_end(dir: &Path) -> Outcome {
    let cfg = dir.join("run.toml");
    let store = dir.join("store");
    let (cfg_s, store_s) = (cfg.to_str().unwrap(), store.to_str().unwrap());

    let start = Instant::now();
    let first: Value = serde_json::from_str(&fp(&["run-eval", "--config", cfg_s, "--store", store_s])?).unwrap();
    let took = start.elapsed();
    ensure!(took < Duration::from_secs(60), "dry run took {took:?}");
    ensure!(first["written"] == 300 && first["tombstones"] == 0, "first run {first}");

    let records = latest_records(&store);
    ensure!(records.len() == 300, "{} records in store", records.len());

    let second: Value = serde_json::from_str(&fp(&["run-eval", "--config", cfg_s, "--store", store_s])?).unwrap();
    ensure!(second["network_calls"] == 0 && second["written"] == 0, "rerun {second}");

    let out_a = dir.join("reports-a");
    let out_b = dir.join("reports-b");
    for out in [&out_a, &out_b] {
        fp(&["report", "--store", store_s, "--uid", "--a", "0.5,1,2,5,10", "--out", out.to_str().unwrap()])?;
    }
    for f in ["lengths.csv", "uid_stub.csv", "ranks_stub.csv"] {
        let a = std::fs::read(out_a.join(f)).map_err(|e| format!("{f}: {e}"))?;
        ensure!(a == std::fs::read(out_b.join(f)).unwrap(), "{f} differs between replays");
    }

    let groups = oracle_groups(&records);
    let lengths = read_csv(&out_a.join("lengths.csv"));
    ensure!(lengths.len() == groups.len(), "{} length rows, oracle {}", lengths.len(), groups.len());
    for row in &lengths {
        let key = (row["history_signal"].clone(), row["prompt_type"].clone(), row["shot"].clone());
        let g = groups.get(&key).ok_or(format!("unexpected group {key:?}"))?;
        ensure!(row["n"] == g.n.to_string() && row["excluded"] == "0", "{key:?} counts");
        bits_eq("mean_prompt_tokens", &row["mean_prompt_tokens"], g.prompt as f64 / g.n as f64)?;
        bits_eq("mean_completion_tokens", &row["mean_completion_tokens"], g.completion as f64 / g.n as f64)?;
        bits_eq("mean_total_tokens", &row["mean_total_tokens"], (g.prompt + g.completion) as f64 / g.n as f64)?;
    }

    let uids = read_csv(&out_a.join("uid_stub.csv"));
    ensure!(uids.len() == groups.len() * 5, "{} uid rows", uids.len());
    for row in &uids {
        let key = (row["history_signal"].clone(), row["prompt_type"].clone(), row["shot"].clone());
        let g = &groups[&key];
        let m_h = g.meteor.iter().fold(0.0, |s, x| s + x) / g.n as f64;
        let l_h = (g.prompt + g.completion) as f64 / g.n as f64;
        let a: f64 = row["a"].parse().unwrap();
        bits_eq("M_H", &row["M_H"], m_h)?;
        bits_eq("L_H", &row["L_H"], l_h)?;
        bits_eq("uid", &row["uid"], m_h.powf(a) / l_h)?;
    }
    Ok(format!(
        "300 records in {:.2}s; rerun network calls 0; {} length rows and {} UID rows match the oracle bit for bit",
        took.as_secs_f64(),
        lengths.len(),
        uids.len()
    ))
}

fn rank_dynamics_oracle(dir: &Path) -> Outcome {
    let ranks = read_csv(&dir.join("reports-a").join("ranks_stub.csv"));
    let uids = read_csv(&dir.join("reports-a").join("uid_stub.csv"));
    let mut checked = 0;
    for a in ["0.5", "1", "2", "5", "10"] {
        let a_val: f64 = a.parse().unwrap();
        // brute force: every configuration's uid at this a, sorted descending
        let mut pts: Vec<(f64, String)> = uids
            .iter()
            .filter(|r| r["a"].parse::<f64>().unwrap() == a_val)
            .map(|r| {
                let (m, l): (f64, f64) = (r["M_H"].parse().unwrap(), r["L_H"].parse().unwrap());
                (m.powf(a_val) / l, format!("{}|{}|{}", r["history_signal"], r["prompt_type"], r["shot"]))
            })
            .collect();
        pts.sort_by(|x, y| y.0.partial_cmp(&x.0).unwrap().then_with(|| x.1.cmp(&y.1)));
        ensure!(pts.len() == 10, "a={a}: {} configurations", pts.len());
        for (pos, (_, id)) in pts.iter().enumerate() {
            let row = ranks
                .iter()
                .find(|r| r["a"].parse::<f64>().unwrap() == a_val && &r["config_id"] == id)
                .ok_or(format!("a={a}: no rank for {id}"))?;
            ensure!(row["rank"] == (pos + 1).to_string(), "a={a}: {id} ranked {} but oracle {}", row["rank"], pos + 1);
            checked += 1;
        }
    }
    Ok(format!("{checked} (a, config) ranks match the brute-force sort for a in 0.5,1,2,5,10"))
}

#[test]
fn acceptance() {
    let dir = dry_run_dir();
    let criteria: Vec<(&str, Box<dyn FnOnce() -> Outcome>)> = vec![
        ("uid-identities", Box::new(|| timed(Some(Duration::from_secs(1)), uid_identities))),
        ("selection-oracles", Box::new(|| timed(Some(Duration::from_secs(5)), selection_oracles))),
        ("exemplar-shift", Box::new(|| timed(None, exemplar_shift))),
        ("prompt-rendering", Box::new(|| timed(None, prompt_rendering))),
        ("perplexity-optimizer", Box::new(|| timed(None, perplexity_optimizer))),
        ("meteor", Box::new(|| timed(None, meteor_fixtures))),
        ("end-to-end-dry-run", Box::new(|| timed(Some(Duration::from_secs(60)), || end_to_end(dir.path())))),
        ("rank-dynamics", Box::new(|| timed(None, || rank_dynamics_oracle(dir.path())))),
    ];
    println!();
    let mut failed = Vec::new();
    for (name, check) in criteria {
        match check() {
            Ok(detail) => println!("PASS {name:<22} {detail}"),
            Err(why) => {
                println!("FAIL {name:<22} {why}");
                failed.push(name);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}

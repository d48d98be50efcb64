// Parse a persona-grounded corpus and turn it into context/response instances.

use frugal_prompt::corpus::{build_corpus_instances, parse_conversations_str};

const CORPUS: &str = r#"{"id":"pc-1","dataset":"msc","background":{"kind":"persona","p1":"I love hiking.","p2":"I am a nurse."},"utterances":[{"speaker":"p1","text":"hi, how was work?","session":1},{"speaker":"p2","text":"long shift at the hospital.","session":1},{"speaker":"p1","text":"want to hike this weekend?","session":2},{"speaker":"p2","text":"only if it is a short trail.","session":2}]}
{"id":"tc-1","dataset":"tc","background":{"kind":"knowledge","shared":"The Eiffel Tower is 330 m tall."},"utterances":[{"speaker":"p1","text":"Have you been to Paris?"},{"speaker":"p2","text":"Yes, I climbed the tower."},{"speaker":"p1","text":"How tall is it?"},{"speaker":"p2","text":"About 330 metres."}]}
"#;

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let convs = parse_conversations_str(CORPUS)?;
    let instances = build_corpus_instances(&convs)?;
    for inst in &instances {
        println!(
            "{} history={} current={:?} target={:?} session={:?}",
            inst.key(),
            inst.history.len(),
            inst.current.text,
            inst.target.text,
            inst.origin_session
        );
    }
    // MSC only yields responses from sessions 2-4; TC yields every P1/P2 turn.
    assert_eq!(instances.len(), 3);
    assert_eq!(instances[0].history.len(), 2);
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().unwrap();
}

// A full evaluation matrix against the stub endpoint, resumed from its
// store, then reported.

use frugal_prompt::harness::{run_eval, write_reports, ReportOptions, RunFile};
use frugal_prompt::metrics::MetricId;

const RUN: &str = r#"
name = "example"
seed = 1
limit = 12

[corpus.synthetic]
conversations = 4
turns = 8
persona = true

[[endpoints]]
id = "stub"
stub_completion = "echo-last:6"

[matrix]
representations = ["full", "recent:2", "summary:pegasus-ds"]
shots = ["zs", "fs"]
background = true
"#;

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join(format!("fp-example-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    let run = RunFile::parse(RUN)?;

    let first = run_eval(&run, Some(&dir))?;
    let second = run_eval(&run, Some(&dir))?;
    println!("first  {first:?}\nsecond {second:?}");
    assert_eq!(first.written, 72);
    assert_eq!((second.written, second.network_calls), (0, 0));

    let opts = ReportOptions { uid: true, metrics: vec![MetricId::Meteor], a_values: vec![0.5, 1.0, 2.0, 5.0, 10.0] };
    for path in write_reports(&dir, &dir.join("reports"), &opts)? {
        println!("wrote {}", path.display());
    }
    print!("{}", std::fs::read_to_string(dir.join("reports/lengths.csv"))?);
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().unwrap();
}

use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use frugal_prompt::client::LogprobModel;
use frugal_prompt::corpus::{build_corpus_instances, normalize_conversation, read_conversations, write_conversations};
use frugal_prompt::harness::{
    chat_turn, read_manifest, run_eval, write_reports, ChatSession, ChatSettings, ReportOptions, RunFile,
};
use frugal_prompt::metrics::MetricId;
use frugal_prompt::optimizer::{sample_validation, select_best, write_score_table, CandidateSet, Provenance, ScoringSetup};
use frugal_prompt::prompt::{load_templates_file, manual_template_id, render_with, select_exemplar, ExemplarPool, ShotMode};
use frugal_prompt::tokenize::TokenizerRegistry;
use frugal_prompt::{HistoryRepresentation, Instance};

#[derive(Parser)]
#[command(name = "fp", version, about = "Cost-aware dialog prompting: build, optimize, evaluate, report")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Validate a conversation file and count its instances.
    Ingest {
        file: PathBuf,
        /// Write the normalized corpus here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render one prompt.
    BuildPrompt {
        #[command(flatten)]
        src: Source,
        /// Template id; defaults to the manual template for --rep/--shot.
        #[arg(long)]
        template: Option<String>,
        #[arg(long, default_value = "full")]
        rep: HistoryRepresentation,
        #[arg(long, default_value = "zs")]
        shot: ShotMode,
        /// `conversation:target_index`; defaults to the first instance.
        #[arg(long)]
        instance: Option<String>,
    },
    /// Pick the lowest-perplexity template from a catalog.
    OptimizeTemplate {
        #[command(flatten)]
        src: Source,
        /// Candidate templates (JSONL); all must share shot and context.
        #[arg(long)]
        catalog: PathBuf,
        /// Validation instances sampled from the corpus.
        #[arg(long, default_value_t = 100)]
        n: usize,
        #[arg(long, default_value = "summary:pegasus-ds")]
        rep: HistoryRepresentation,
        /// Endpoint id from --config; the built-in stub otherwise.
        #[arg(long)]
        endpoint: Option<String>,
        /// Score table (CSV) destination.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run an evaluation matrix and print a JSON summary.
    RunEval {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the run file's store.
        #[arg(long)]
        store: Option<PathBuf>,
    },
    /// Write CSV reports from a result store.
    Report {
        #[arg(long)]
        store: PathBuf,
        /// Also emit UID, rank-dynamics and session tables.
        #[arg(long)]
        uid: bool,
        /// Metric-importance exponents; defaults to the run manifest's.
        #[arg(long, value_delimiter = ',')]
        a: Vec<f64>,
        /// Metrics to report; defaults to the run manifest's.
        #[arg(long, value_delimiter = ',')]
        metrics: Vec<MetricId>,
        /// Output directory; defaults to <store>/reports.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Talk to an endpoint. `/rep <representation>` switches history
    /// compression, `/quit` ends the session.
    Chat {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        endpoint: Option<String>,
        #[arg(long, default_value = "recent:2")]
        rep: HistoryRepresentation,
        #[arg(long, default_value = "zs")]
        shot: ShotMode,
    },
}

/// Where conversations come from: a run file or a bare corpus file.
#[derive(Args)]
struct Source {
    #[arg(long, conflicts_with = "corpus")]
    config: Option<PathBuf>,
    #[arg(long)]
    corpus: Option<PathBuf>,
}

impl Source {
    fn run_file(&self) -> Result<RunFile> {
        match (&self.config, &self.corpus) {
            (Some(c), _) => Ok(RunFile::load(c)?),
            (None, Some(p)) => {
                let mut rf = RunFile::parse("name = \"cli\"\n[corpus]\n[matrix]\n")?;
                rf.corpus.splits.insert(rf.split.clone(), p.clone());
                Ok(rf)
            }
            (None, None) => bail!("give --config or --corpus"),
        }
    }
}

fn find_instance<'a>(instances: &'a [Instance], key: Option<&str>) -> Result<&'a Instance> {
    match key {
        None => instances.first().ok_or_else(|| anyhow!("corpus has no instances")),
        Some(k) => instances
            .iter()
            .find(|i| i.key() == k)
            .ok_or_else(|| anyhow!("no instance {k}")),
    }
}

fn ingest(file: &Path, out: Option<&Path>) -> Result<()> {
    let mut convs = read_conversations(file)?;
    let instances = build_corpus_instances(&convs)?;
    let with_bg = convs.iter().filter(|c| c.background.is_some()).count();
    println!(
        "{}",
        serde_json::json!({
            "conversations": convs.len(),
            "instances": instances.len(),
            "with_background": with_bg,
        })
    );
    if let Some(out) = out {
        convs.iter_mut().for_each(normalize_conversation);
        let f = std::fs::File::create(out).with_context(|| out.display().to_string())?;
        write_conversations(std::io::BufWriter::new(f), &convs)?;
    }
    Ok(())
}

fn build_prompt(
    src: &Source,
    template: Option<&str>,
    rep: &HistoryRepresentation,
    shot: ShotMode,
    instance: Option<&str>,
) -> Result<()> {
    let rf = src.run_file()?;
    let convs = rf.conversations()?;
    let instances = build_corpus_instances(&convs)?;
    let inst = find_instance(&instances, instance)?;
    let bg = inst.background.as_ref().map(|b| b.kind);
    let id = template.map(str::to_string).unwrap_or_else(|| manual_template_id(shot, Some(rep), bg));
    let templates = rf.templates()?;
    let t = templates
        .iter()
        .find(|t| t.id == id)
        .ok_or_else(|| anyhow!("unknown template {id}"))?;
    let scorer = rf.scorer.client()?;
    let comp = rf.compressor(&scorer, None)?;
    let ctx = comp.compress_instance(inst, rep)?;
    let pool = ExemplarPool::new(instances.clone());
    let exemplar = match t.shot {
        ShotMode::FewShot => Some(select_exemplar(inst, &pool, rep, &comp, rf.seed)?),
        ShotMode::ZeroShot => None,
    };
    let tok = TokenizerRegistry::default().get(&rf.tokenizer)?;
    let p = render_with(t, inst, &ctx, exemplar.as_ref(), tok.as_ref())?;
    println!("{}", p.text);
    eprintln!(
        "{}",
        serde_json::json!({
            "template_id": p.template_id,
            "instance": inst.key(),
            "total_tokens": p.total_tokens,
            "literal_tokens": p.literal_tokens,
            "component_lengths": p.component_lengths,
        })
    );
    Ok(())
}

fn optimize_template(
    src: &Source,
    catalog: &Path,
    n: usize,
    rep: &HistoryRepresentation,
    endpoint: Option<&str>,
    out: Option<&Path>,
) -> Result<()> {
    let rf = src.run_file()?;
    let mut templates = load_templates_file(catalog)?.into_iter();
    let base = templates.next().ok_or_else(|| anyhow!("empty catalog {}", catalog.display()))?;
    let mut set = CandidateSet::new(base);
    for t in templates {
        set.push(t, Provenance::Paraphrase)?;
    }
    let convs = rf.conversations()?;
    let instances = build_corpus_instances(&convs)?;
    let sample = sample_validation(&instances, n, rf.seed);
    let spec = match endpoint {
        Some(id) => rf.endpoint(id)?.clone(),
        None => rf.endpoints[0].clone(),
    };
    let llm = spec.client(None)?;
    let scorer = rf.scorer.client()?;
    let comp = rf.compressor(&scorer, None)?;
    let pool = ExemplarPool::new(instances);
    let mut setup = ScoringSetup::new(&comp, &pool);
    setup.seed = rf.seed;
    setup.parallel = spec.max_parallel;
    let sel = select_best(&set, &sample, rep, &llm as &dyn LogprobModel, &setup)?;
    match out {
        Some(p) => write_score_table(std::fs::File::create(p).with_context(|| p.display().to_string())?, &sel.scores)?,
        None => write_score_table(std::io::stdout().lock(), &sel.scores)?,
    }
    eprintln!("selected {}", sel.best.id);
    Ok(())
}

fn report(store: &Path, uid: bool, a: Vec<f64>, metrics: Vec<MetricId>, out: Option<PathBuf>) -> Result<()> {
    let manifest = read_manifest(store)?;
    let a_values = match (a.is_empty(), &manifest) {
        (false, _) => a,
        (true, Some(m)) => m.a_values.clone(),
        (true, None) => frugal_prompt::harness::default_a_values(),
    };
    let metrics = match (metrics.is_empty(), &manifest) {
        (false, _) => metrics,
        (true, Some(m)) => m.metrics.clone(),
        (true, None) => vec![MetricId::Meteor],
    };
    let out = out.unwrap_or_else(|| store.join("reports"));
    let files = write_reports(store, &out, &ReportOptions { uid, metrics, a_values })?;
    for f in files {
        println!("{}", f.display());
    }
    Ok(())
}

fn chat(config: &Path, endpoint: Option<&str>, rep: HistoryRepresentation, shot: ShotMode) -> Result<()> {
    let rf = RunFile::load(config)?;
    let spec = match endpoint {
        Some(id) => rf.endpoint(id)?,
        None => &rf.endpoints[0],
    };
    let llm = spec.client(None)?;
    let scorer = rf.scorer.client()?;
    let comp = rf.compressor(&scorer, None)?;
    let settings = ChatSettings {
        representation: rep,
        shot,
        tokenizer: rf.tokenizer.clone(),
        seed: rf.seed,
        decoding: rf.decoding.clone(),
    };
    let pool = match rf.conversations() {
        Ok(convs) => ExemplarPool::new(build_corpus_instances(&convs)?),
        Err(_) => ExemplarPool::new(Vec::new()),
    };
    let mut session = ChatSession::new("chat", settings).with_pool(pool);
    let stdin = std::io::stdin();
    let mut stdout = std::io::stdout();
    for line in stdin.lock().lines() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if line == "/quit" {
            break;
        }
        if let Some(r) = line.strip_prefix("/rep ") {
            match r.parse() {
                Ok(rep) => session.set_representation(rep),
                Err(e) => eprintln!("{e}"),
            }
            continue;
        }
        match chat_turn(&mut session, line, &llm, &comp) {
            Ok(t) => {
                writeln!(stdout, "{}", t.reply)?;
                eprintln!(
                    "[prompt {} + completion {} = {} tokens]",
                    t.prompt.total_tokens,
                    t.completion_tokens,
                    t.total_tokens()
                );
            }
            Err(e) => eprintln!("error: {e}"),
        }
    }
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().cmd {
        Cmd::Ingest { file, out } => ingest(&file, out.as_deref()),
        Cmd::BuildPrompt { src, template, rep, shot, instance } => {
            build_prompt(&src, template.as_deref(), &rep, shot, instance.as_deref())
        }
        Cmd::OptimizeTemplate { src, catalog, n, rep, endpoint, out } => {
            optimize_template(&src, &catalog, n, &rep, endpoint.as_deref(), out.as_deref())
        }
        Cmd::RunEval { config, store } => {
            let rf = RunFile::load(&config)?;
            let summary = run_eval(&rf, store.as_deref())?;
            println!("{}", serde_json::to_string(&summary)?);
            Ok(())
        }
        Cmd::Report { store, uid, a, metrics, out } => report(&store, uid, a, metrics, out),
        Cmd::Chat { config, endpoint, rep, shot } => chat(&config, endpoint.as_deref(), rep, shot),
    }
}

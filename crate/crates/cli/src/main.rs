//! `spacetime`: frame selection, episodes, curation and evaluation from the
//! command line. Every command is a thin adapter over the library.

mod config;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use spacetime::curation::{curate_corpus, export_training_records, load_corpus, CorpusStats, Judge};
use spacetime::embedding::{normalize_rows, parse_embedding_matrix, Embedding};
use spacetime::format::report_json;
use spacetime::ingestion::initial_frames;
use spacetime::metrics::{read_records, report, TaskKind};
use spacetime::orchestrator::{run_episode, Episode, ModelClient, RemoteModelClient, ScriptedModel, Trace};
use spacetime::scenario::Scenario;
use spacetime::selection::{select_frames, SelectionResult};
use spacetime::tooling::mock::ZoomBackend;
use spacetime::tooling::remote::{EmbedClient, EmbeddingSelectionBackend, RemoteToolBackend};
use spacetime::tooling::{ToolName, ToolSpec};
use spacetime::{Error, Result, SelectionConfig, ToolRegistry, VideoManifest};

use config::Config;

#[derive(Parser)]
#[command(name = "spacetime", version, about = "Query-aware frame selection and tool-driven video reasoning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Select K diverse, query-relevant frames from an embedding file.
    Select(SelectArgs),
    /// Run one episode and write its trace.
    Episode(EpisodeArgs),
    /// Curate a corpus into text and visual trajectories.
    Curate(CurateArgs),
    /// Score predictions and summarize tool use.
    Eval(EvalArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Pad {
    Uniform,
}

#[derive(Args)]
struct SelectArgs {
    #[arg(long)]
    embeddings: PathBuf,
    /// Embedding file with a single row.
    #[arg(long)]
    query_embedding: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    pool_multiplier: Option<usize>,
    #[arg(long)]
    epsilon: Option<f64>,
    /// Top up early-stopped selections to K.
    #[arg(long, value_enum)]
    pad: Option<Pad>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct Backend {
    /// Scripted model and tool outputs (offline).
    #[arg(long, conflicts_with = "live")]
    fixtures: Option<PathBuf>,
    /// Use the configured model, tool and embedding services.
    #[arg(long)]
    live: bool,
    #[arg(long)]
    model_url: Option<String>,
    #[arg(long)]
    tools_url: Option<String>,
    #[arg(long)]
    embed_url: Option<String>,
}

#[derive(Args)]
struct EpisodeArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    question: String,
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long, default_value = "")]
    id: String,
    #[command(flatten)]
    backend: Backend,
    /// Allow at most one tool call.
    #[arg(long)]
    single_turn: bool,
    #[arg(long)]
    max_rounds: Option<usize>,
    #[arg(long)]
    context_budget: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CurateArgs {
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for dataset.ndjson and stats.json.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    backend: Backend,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    judge: Option<Judge>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    records: PathBuf,
    /// A trace file (one document, a JSON array, or one trace per line) or a
    /// directory of trace files.
    #[arg(long)]
    traces: Option<PathBuf>,
    /// Score only records of this kind.
    #[arg(long)]
    kind: Option<TaskKind>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Select(a) => cmd_select(a),
        Command::Episode(a) => cmd_episode(a),
        Command::Curate(a) => cmd_curate(a),
        Command::Eval(a) => cmd_eval(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::BudgetTooSmall { .. } => 3,
        Error::IdMismatch(_) => 4,
        Error::Parse(_)
        | Error::Json(_)
        | Error::InvalidManifest(_)
        | Error::EmptyManifest
        | Error::EmptyInput(_)
        | Error::DimensionMismatch { .. }
        | Error::ZeroVector { .. }
        | Error::ZeroGroundTruth
        | Error::InvalidConfig(_) => 2,
        _ => 1,
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text)?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn read_embeddings(path: &Path) -> Result<Vec<Embedding>> {
    let text = std::fs::read_to_string(path)?;
    normalize_rows(&parse_embedding_matrix(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?)
}

#[derive(Serialize)]
struct SelectionReport {
    frames: usize,
    k: usize,
    pool_size: usize,
    indices: Vec<usize>,
    presented_indices: Vec<usize>,
    gains: Vec<f64>,
    log_det: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    padded_indices: Option<Vec<usize>>,
}

impl SelectionReport {
    fn new(total: usize, cfg: &SelectionConfig, r: SelectionResult, pad: Option<Pad>) -> Self {
        Self {
            frames: total,
            k: cfg.k,
            pool_size: total.min(cfg.k.saturating_mul(cfg.pool_multiplier)),
            padded_indices: pad.map(|Pad::Uniform| r.pad_uniform(total, cfg.k)),
            indices: r.indices,
            presented_indices: r.presented_indices,
            gains: r.gains,
            log_det: r.log_det,
        }
    }
}

fn cmd_select(a: SelectArgs) -> Result<()> {
    let mut cfg = Config::resolve(a.config.as_deref())?.selection;
    if let Some(k) = a.k {
        cfg.k = k;
    }
    if let Some(m) = a.pool_multiplier {
        cfg.pool_multiplier = m;
    }
    if let Some(e) = a.epsilon {
        cfg.epsilon = e;
    }
    let frames = read_embeddings(&a.embeddings)?;
    let mut query = read_embeddings(&a.query_embedding)?;
    if query.len() != 1 {
        return Err(Error::Parse(format!(
            "{}: expected exactly one query row, found {}",
            a.query_embedding.display(),
            query.len()
        )));
    }
    let result = select_frames(&query.remove(0), &frames, &cfg)?;
    emit(a.out.as_deref(), &report_json(&SelectionReport::new(frames.len(), &cfg, result, a.pad))?)
}

/// Offline: scripted model and mock tools from a scenario file. Live: remote
/// model, remote tools, local zoom, and embedding-driven frame selection when
/// an embedding service is configured.
fn backends(b: &Backend, cfg: &Config) -> Result<(Box<dyn ModelClient>, ToolRegistry)> {
    if !b.live {
        let path = b
            .fixtures
            .clone()
            .or_else(|| cfg.paths.fixtures.clone())
            .ok_or_else(|| Error::InvalidConfig("offline mode needs --fixtures (or --live)".into()))?;
        let scenario = Scenario::load(&path)?;
        let model: Box<dyn ModelClient> = Box::new(ScriptedModel::new(scenario.script.clone()));
        return Ok((model, scenario.registry()));
    }
    let pick = |flag: &Option<String>, file: &Option<String>| flag.clone().or_else(|| file.clone());
    let model_url = pick(&b.model_url, &cfg.endpoints.model)
        .ok_or_else(|| Error::InvalidConfig("--live needs a model URL".into()))?;
    let mut registry = ToolRegistry::new();
    registry.register(ToolSpec::builtin(ToolName::Zoom), ZoomBackend)?;
    if let Some(url) = pick(&b.embed_url, &cfg.endpoints.embed) {
        registry.register(
            ToolSpec::builtin(ToolName::FrameSelection),
            EmbeddingSelectionBackend::new(EmbedClient::new(url)),
        )?;
    }
    if let Some(url) = pick(&b.tools_url, &cfg.endpoints.tools) {
        let remote = std::sync::Arc::new(RemoteToolBackend::new(url));
        for t in ToolName::ALL {
            if registry.spec(t).is_none() {
                registry.register_shared(ToolSpec::builtin(t), remote.clone())?;
            }
        }
    }
    Ok((Box::new(RemoteModelClient::new(model_url)), registry))
}

fn cmd_episode(a: EpisodeArgs) -> Result<()> {
    let mut cfg = Config::resolve(a.config.as_deref())?;
    if a.single_turn {
        cfg.episode.single_turn = true;
    }
    if let Some(n) = a.max_rounds {
        cfg.episode.max_rounds = n;
    }
    if let Some(b) = a.context_budget {
        cfg.episode.context_budget = b;
    }
    cfg.validate()?;
    let manifest_path = a
        .manifest
        .or_else(|| cfg.paths.manifest.clone())
        .ok_or_else(|| Error::InvalidConfig("no manifest given".into()))?;
    let manifest = VideoManifest::load(&manifest_path)?;
    let embeddings = match a.embeddings.or_else(|| cfg.paths.embeddings.clone()) {
        Some(p) => Some(read_embeddings(&p)?),
        None => None,
    };
    let (model, registry) = backends(&a.backend, &cfg)?;
    let start = initial_frames(&manifest, cfg.curation.target_fps, cfg.curation.initial_frames)?;
    let mut episode = Episode::new(&a.question, &manifest, manifest.frame_refs(&start)?)
        .with_id(a.id)
        .with_selection(cfg.selection);
    if let Some(e) = &embeddings {
        episode = episode.with_embeddings(e);
    }
    let trace = run_episode(model.as_ref(), &registry, &episode, &cfg.episode)?;
    emit(a.out.as_deref(), &trace.to_json()?)
}

fn cmd_curate(a: CurateArgs) -> Result<()> {
    let mut cfg = Config::resolve(a.config.as_deref())?;
    if let Some(w) = a.workers {
        cfg.curation.workers = w;
    }
    if let Some(j) = a.judge {
        cfg.curation.judge = j;
    }
    let corpus = a
        .corpus
        .or_else(|| cfg.paths.corpus.clone())
        .ok_or_else(|| Error::InvalidConfig("no corpus given".into()))?;
    let samples = load_corpus(&corpus)?;
    let (dataset, stats) = if samples.is_empty() {
        Default::default()
    } else {
        let (model, registry) = backends(&a.backend, &cfg)?;
        curate_corpus(model.as_ref(), &registry, &samples, &cfg.curation(), cfg.curation.workers)?
    };
    std::fs::create_dir_all(&a.out)?;
    export_training_records(a.out.join("dataset.ndjson"), &dataset)?;
    let summary = stats.summary();
    std::fs::write(a.out.join("stats.json"), report_json(&summary)?)?;
    debug_assert_eq!(CorpusStats::from_dataset(&dataset), stats);
    println!(
        "text_cot={} visual_trajectory={} discard={} mean_tool_calls={}",
        summary.counts.text_cot,
        summary.counts.visual_trajectory,
        summary.counts.discard,
        if summary.mean_tool_calls_defined {
            format!("{:.3}", summary.mean_tool_calls)
        } else {
            "undefined".into()
        }
    );
    Ok(())
}

fn load_traces(path: &Path) -> Result<Vec<Trace>> {
    if path.is_dir() {
        let mut files: Vec<PathBuf> = std::fs::read_dir(path)?
            .map(|e| e.map(|e| e.path()))
            .collect::<std::io::Result<_>>()?;
        files.retain(|p| p.extension().is_some_and(|x| x == "json"));
        files.sort();
        let mut out = Vec::new();
        for f in files {
            out.extend(load_traces(&f)?);
        }
        return Ok(out);
    }
    let text = std::fs::read_to_string(path)?;
    if let Ok(v) = serde_json::from_str::<serde_json::Value>(&text) {
        return Ok(match v {
            serde_json::Value::Array(_) => serde_json::from_value(v)?,
            _ => vec![serde_json::from_value(v)?],
        });
    }
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Trace::from_json(l).map_err(|e| Error::Parse(format!("{}: {e}", path.display()))))
        .collect()
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let records = read_records(std::io::BufReader::new(std::fs::File::open(&a.records)?))?;
    let traces = match &a.traces {
        Some(p) => load_traces(p)?,
        None => Vec::new(),
    };
    if !traces.is_empty() {
        // alignment is checked on the full sets, before any kind filter
        report(&traces, &records)?;
    }
    let (records, traces) = match a.kind {
        None => (records, traces),
        Some(kind) => {
            let kept: Vec<_> = records.into_iter().filter(|r| r.kind == kind).collect();
            let traces = traces
                .into_iter()
                .filter(|t| kept.iter().any(|r| r.id == t.id))
                .collect();
            (kept, traces)
        }
    };
    emit(a.out.as_deref(), &report_json(&report(&traces, &records)?)?)
}

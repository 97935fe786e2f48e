mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{BackendKind, CliConfig, RetrievalKind};

/// Entity linking agent: index building, linking, evaluation and
/// fine-tuning data generation.
///
/// Settings come from a TOML config file, then `ELA_*` environment
/// variables, then flags; each layer overrides the one before.
#[derive(Debug, Parser)]
#[command(name = "ela", version)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct GlobalArgs {
    /// TOML config file (also ELA_CONFIG).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// More log output on stderr; repeat for debug level.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    /// Chat backend.
    #[arg(long, global = true, value_enum)]
    backend: Option<BackendKind>,
    /// Script file for the scripted backend.
    #[arg(long, global = true)]
    script: Option<PathBuf>,
    /// Chat-completions endpoint URL for the http backend.
    #[arg(long, global = true)]
    endpoint: Option<String>,
    #[arg(long, global = true)]
    model: Option<String>,
    /// Entity search backend.
    #[arg(long, global = true, value_enum)]
    retrieval: Option<RetrievalKind>,
    /// Title index directory.
    #[arg(long, global = true)]
    index: Option<PathBuf>,
    /// Cache directory for remote search responses.
    #[arg(long, global = true)]
    cache_dir: Option<PathBuf>,
    /// Candidates per mention (default 50 for linking, 35 for QA).
    #[arg(long, global = true)]
    k: Option<usize>,
    #[arg(long, global = true)]
    max_mentions: Option<usize>,
    /// Records processed concurrently.
    #[arg(long, global = true)]
    workers: Option<usize>,
}

impl GlobalArgs {
    fn as_config(&self) -> CliConfig {
        let mut cfg = CliConfig::default();
        cfg.backend.kind = self.backend;
        cfg.backend.script = self.script.clone();
        cfg.backend.endpoint_url = self.endpoint.clone();
        cfg.backend.model_name = self.model.clone();
        cfg.retrieval.backend = self.retrieval;
        cfg.retrieval.index = self.index.clone();
        cfg.retrieval.cache_dir = self.cache_dir.clone();
        cfg.agent.k = self.k;
        cfg.agent.max_mentions = self.max_mentions;
        cfg.parallelism.workers = self.workers;
        cfg
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Title index management.
    #[command(subcommand)]
    Index(IndexCommand),
    /// Link the entities of one question and print the result as JSON.
    Link(LinkArgs),
    /// Score the agent on a labelled dataset.
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Fine-tuning data generation.
    #[command(subcommand)]
    Trajectories(TrajectoryCommand),
    /// Replace Freebase MIDs in a dataset with Wikidata QIDs.
    MapFreebase(MapFreebaseArgs),
}

#[derive(Debug, Subcommand)]
enum IndexCommand {
    /// Build a title index from a corpus.
    Build(IndexBuildArgs),
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
struct CorpusInput {
    /// Documents as JSON lines: {"doc_id", "title", "first_paragraph", "text"}.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Raw pages as JSON lines: {"title", "text"}.
    #[arg(long)]
    pages: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct IndexBuildArgs {
    #[command(flatten)]
    input: CorpusInput,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct LinkArgs {
    #[arg(long)]
    question: String,
    #[arg(long, default_value = "q")]
    id: String,
}

#[derive(Debug, Subcommand)]
enum EvalCommand {
    /// Entity-linking precision, recall and accuracy.
    El(EvalArgs),
    /// Linking as retrieval for QA: Hit@1, EM and F1.
    Qa(EvalQaArgs),
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Dataset JSON lines.
    #[arg(long)]
    dataset: PathBuf,
    /// Per-query results as JSON lines.
    #[arg(long)]
    results: Option<PathBuf>,
    /// Summary JSON file.
    #[arg(long)]
    summary: Option<PathBuf>,
    /// Print the summary as JSON instead of a table.
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Args)]
struct EvalQaArgs {
    #[command(flatten)]
    eval: EvalArgs,
    /// Documents with full text (default: corpus.jsonl in the index directory).
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Answer prompt template.
    #[arg(long)]
    answer_template: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum TrajectoryCommand {
    /// Run the agent over a dataset and record every trajectory.
    Generate(GenerateArgs),
    /// Write training records for trajectories that matched gold.
    Export(ExportArgs),
}

#[derive(Debug, Args)]
struct GenerateArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Trajectory JSON lines.
    #[arg(long)]
    out: PathBuf,
    /// Checkpoint directory; an interrupted run resumes from it.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ExportArgs {
    #[arg(long)]
    trajectories: PathBuf,
    /// Training record JSON lines.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct MapFreebaseArgs {
    /// Dataset whose golds are MIDs, or empty with a `sparql` field.
    #[arg(long)]
    dataset: PathBuf,
    /// Tab-separated MID and QID per line.
    #[arg(long)]
    mapping: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Report of dropped records as JSON.
    #[arg(long)]
    report: Option<PathBuf>,
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .parse_env("ELA_LOG")
        .format_timestamp(None)
        .init();
}

fn settings(global: &GlobalArgs) -> anyhow::Result<CliConfig> {
    let path = global
        .config
        .clone()
        .or_else(|| std::env::var_os("ELA_CONFIG").map(PathBuf::from));
    let mut cfg = match path {
        Some(p) => CliConfig::load(&p)?,
        None => CliConfig::default(),
    };
    cfg.overlay(CliConfig::from_env(|name| std::env::var(name).ok())?);
    cfg.overlay(global.as_config());
    Ok(cfg)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let cfg = settings(&cli.global)?;
    match cli.command {
        Command::Index(IndexCommand::Build(a)) => commands::index_build(a.input.corpus, a.input.pages, &a.out),
        Command::Link(a) => commands::link(&cfg, &a.id, &a.question),
        Command::Eval(EvalCommand::El(a)) => commands::eval_el(&cfg, &a.into()),
        Command::Eval(EvalCommand::Qa(a)) => commands::eval_qa(&cfg, &a.eval.into(), a.corpus, a.answer_template),
        Command::Trajectories(TrajectoryCommand::Generate(a)) => {
            commands::trajectories_generate(&cfg, &a.dataset, &a.out, a.checkpoint)
        }
        Command::Trajectories(TrajectoryCommand::Export(a)) => {
            commands::trajectories_export(&cfg, &a.trajectories, &a.out)
        }
        Command::MapFreebase(a) => commands::map_freebase(&a.dataset, &a.mapping, &a.out, a.report.as_deref()),
    }
}

impl From<EvalArgs> for commands::EvalOutput {
    fn from(a: EvalArgs) -> Self {
        Self {
            dataset: a.dataset,
            results: a.results,
            summary: a.summary,
            json: a.json,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(cli.global.verbose);
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

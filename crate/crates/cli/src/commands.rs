use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{anyhow, bail, Context, Result};
use rayon::prelude::*;
use serde::Deserialize;

use ela_core::agent::{AgentConfig, EntityLinkingAgent, PromptTemplate, Stage};
use ela_core::domain::{Document, EntitySet, GoldRecord};
use ela_core::evaluation::{aggregate_el, aggregate_qa, el_metrics};
use ela_core::llm::{BackendConfig, ChatBackend, HttpChatBackend, SamplingParams, ScriptedBackend};
use ela_core::pipelines::{
    answer_question, apply_freebase_mapping, filter_and_export, generate_trajectories, ingest_corpus,
    load_dataset, load_raw_dataset, read_trajectories, score_qa, write_trajectories, AnswerTemplate, Checkpoint,
    FreebaseMapping, RawGoldRecord, RunOptions,
};
use ela_core::report::{print_report, summary_json, write_jsonl, ElRecord, QaRecord, Summary};
use ela_core::retrieval::{
    build_index, read_corpus_jsonl, Bm25Params, CorpusStore, EntitySearcher, KbBackend, KbClient, KbClientConfig,
    TitleIndex,
};

use crate::config::{BackendKind, CliConfig, RetrievalKind};

const TOOL_USE_K: usize = 50;
const QA_K: usize = 35;
const CORPUS_FILE: &str = "corpus.jsonl";

pub struct EvalOutput {
    pub dataset: PathBuf,
    pub results: Option<PathBuf>,
    pub summary: Option<PathBuf>,
    pub json: bool,
}

fn backend(cfg: &CliConfig) -> Result<Box<dyn ChatBackend>> {
    let b = &cfg.backend;
    match b.kind.unwrap_or(BackendKind::Http) {
        BackendKind::Scripted => {
            let path = b.script.as_ref().ok_or_else(|| anyhow!("the scripted backend needs --script"))?;
            let text = std::fs::read_to_string(path).with_context(|| format!("reading script {}", path.display()))?;
            let backend =
                ScriptedBackend::from_json(&text).with_context(|| format!("parsing script {}", path.display()))?;
            Ok(Box::new(backend))
        }
        BackendKind::Http => {
            let mut config = BackendConfig::default();
            if let Some(v) = &b.endpoint_url {
                config.endpoint_url = v.clone();
            }
            if let Some(v) = &b.model_name {
                config.model_name = v.clone();
            }
            if let Some(v) = &b.api_key_env_var {
                config.api_key_env_var = v.clone();
            }
            if let Some(v) = b.timeout_secs {
                config.timeout = Duration::from_secs(v);
            }
            if let Some(v) = b.max_in_flight {
                config.max_in_flight = v;
            }
            if let Some(v) = b.max_retries {
                config.max_retries = v;
            }
            if let Some(v) = b.supports_repetition_penalty {
                config.supports_repetition_penalty = v;
            }
            Ok(Box::new(HttpChatBackend::new(config)?))
        }
    }
}

fn sampling(cfg: &CliConfig) -> Result<SamplingParams> {
    let mut params = SamplingParams::default();
    let b = &cfg.backend;
    if let Some(v) = b.temperature {
        params.temperature = v;
    }
    if let Some(v) = b.top_p {
        params.top_p = v;
    }
    if let Some(v) = b.repetition_penalty {
        params.repetition_penalty = v;
    }
    if let Some(v) = b.max_tokens {
        params.max_tokens = v;
    }
    params.validate()?;
    Ok(params)
}

fn index_dir(cfg: &CliConfig) -> Result<&Path> {
    cfg.retrieval
        .index
        .as_deref()
        .ok_or_else(|| anyhow!("no index directory given (--index, ELA_INDEX or [retrieval] index)"))
}

fn searcher(cfg: &CliConfig) -> Result<Box<dyn EntitySearcher>> {
    let kb = match cfg.retrieval.backend.unwrap_or(RetrievalKind::Local) {
        RetrievalKind::Local => {
            let dir = index_dir(cfg)?;
            let index = TitleIndex::load(dir).with_context(|| format!("loading index {}", dir.display()))?;
            return Ok(Box::new(index));
        }
        RetrievalKind::Wikidata => KbBackend::Wikidata,
        RetrievalKind::Wikipedia => KbBackend::Wikipedia,
    };
    let mut config = KbClientConfig::new(kb);
    config.cache_dir = cfg.retrieval.cache_dir.clone();
    Ok(Box::new(KbClient::new(config)?))
}

fn agent(cfg: &CliConfig, default_k: usize) -> Result<EntityLinkingAgent> {
    let a = &cfg.agent;
    let mut config = if default_k == QA_K {
        AgentConfig::qa()
    } else {
        AgentConfig::tool_use()
    };
    config.k = a.k.unwrap_or(default_k);
    if let Some(m) = a.max_mentions {
        config.max_mentions = m;
    }
    if let Some(f) = a.fewshot {
        config.fewshot_enabled = f;
    }
    if config.k == 0 || config.max_mentions == 0 {
        bail!("k and max_mentions must be at least 1");
    }
    let mut agent = EntityLinkingAgent::new(config);
    if let Some(p) = &a.retrieval_template {
        agent.retrieval_template = PromptTemplate::load(p, Stage::Retrieval)?;
    }
    if let Some(p) = &a.reader_template {
        agent.reader_template = PromptTemplate::load(p, Stage::Reader)?;
    }
    agent.sampling = sampling(cfg)?;
    Ok(agent)
}

fn workers(cfg: &CliConfig) -> Result<usize> {
    match cfg.parallelism.workers {
        Some(0) => bail!("workers must be at least 1"),
        Some(n) => Ok(n),
        None => {
            let cpus = std::thread::available_parallelism().map_or(1, |n| n.get());
            Ok(cpus.min(cfg.backend.max_in_flight.unwrap_or(BackendConfig::default().max_in_flight)))
        }
    }
}

fn pool(cfg: &CliConfig) -> Result<rayon::ThreadPool> {
    Ok(rayon::ThreadPoolBuilder::new().num_threads(workers(cfg)?).build()?)
}

#[derive(Deserialize)]
struct Page {
    title: String,
    text: String,
}

fn read_pages(path: &Path) -> Result<Vec<(String, String)>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut pages = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let page: Page =
            serde_json::from_str(&line).with_context(|| format!("{}:{}", path.display(), i + 1))?;
        pages.push((page.title, page.text));
    }
    Ok(pages)
}

pub fn index_build(corpus: Option<PathBuf>, pages: Option<PathBuf>, out: &Path) -> Result<()> {
    let docs: Vec<Document> = match (corpus, pages) {
        (Some(path), _) => read_corpus_jsonl(&path)?,
        (None, Some(path)) => {
            let (docs, report) = ingest_corpus(read_pages(&path)?);
            for title in &report.duplicates {
                log::warn!("skipped duplicate page {title:?}");
            }
            if report.untitled > 0 {
                log::warn!("skipped {} untitled pages", report.untitled);
            }
            docs
        }
        (None, None) => bail!("give --corpus or --pages"),
    };
    // Rejects duplicate titles and ids before anything is written.
    let store = CorpusStore::new(docs.iter().cloned())?;
    let index = build_index(docs, Bm25Params::default())?;
    index.save(out)?;
    write_jsonl(&out.join(CORPUS_FILE), store.documents())?;
    println!(
        "indexed {} documents ({} terms) into {}",
        index.doc_count(),
        index.term_count(),
        out.display()
    );
    Ok(())
}

pub fn link(cfg: &CliConfig, id: &str, question: &str) -> Result<()> {
    let query = ela_core::domain::Query::new(id, question)?;
    let agent = agent(cfg, TOOL_USE_K)?;
    let backend = backend(cfg)?;
    let searcher = searcher(cfg)?;
    let outcome = agent.link(&query, &*searcher, &*backend)?;
    println!("{}", serde_json::to_string_pretty(&outcome.result)?);
    Ok(())
}

fn emit(out: &EvalOutput, summary: &Summary) -> Result<()> {
    if let Some(path) = &out.summary {
        std::fs::write(path, summary_json(summary)?).with_context(|| format!("writing {}", path.display()))?;
    }
    let text = if out.json {
        summary_json(summary)?
    } else {
        print_report(summary)?
    };
    print!("{text}");
    Ok(())
}

fn load_nonempty(path: &Path) -> Result<Vec<GoldRecord>> {
    let data = load_dataset(path)?;
    if data.is_empty() {
        bail!("{}: no records", path.display());
    }
    Ok(data)
}

pub fn eval_el(cfg: &CliConfig, out: &EvalOutput) -> Result<()> {
    let data = load_nonempty(&out.dataset)?;
    let agent = agent(cfg, TOOL_USE_K)?;
    let backend = backend(cfg)?;
    let searcher = searcher(cfg)?;
    let records: Vec<ElRecord> = pool(cfg)?.install(|| {
        data.par_iter()
            .map(|gold| {
                let (predicted, error) = match agent.link(&gold.query, &*searcher, &*backend) {
                    Ok(o) => (o.result.predicted_set, None),
                    Err(e) => {
                        log::warn!("query {}: {e}", gold.query.id);
                        (EntitySet::new(), Some(e.to_string()))
                    }
                };
                let scores = el_metrics(&predicted, &gold.gold_entities);
                ElRecord::new(gold, &predicted, scores, error)
            })
            .collect()
    });
    if let Some(path) = &out.results {
        write_jsonl(path, &records).with_context(|| format!("writing {}", path.display()))?;
    }
    let scores: Vec<_> = records.iter().map(|r| r.scores).collect();
    emit(out, &Summary::El(aggregate_el(&scores)?))
}

pub fn eval_qa(
    cfg: &CliConfig,
    out: &EvalOutput,
    corpus: Option<PathBuf>,
    answer_template: Option<PathBuf>,
) -> Result<()> {
    let data = load_nonempty(&out.dataset)?;
    let corpus = match corpus.or_else(|| cfg.retrieval.corpus.clone()) {
        Some(p) => p,
        None => index_dir(cfg)?.join(CORPUS_FILE),
    };
    let store = CorpusStore::load_jsonl(&corpus).with_context(|| format!("loading corpus {}", corpus.display()))?;
    let template = match answer_template.or_else(|| cfg.agent.answer_template.clone()) {
        Some(p) => AnswerTemplate::load(&p)?,
        None => AnswerTemplate::default(),
    };
    let agent = agent(cfg, QA_K)?;
    let backend = backend(cfg)?;
    let searcher = searcher(cfg)?;
    let records: Vec<QaRecord> = pool(cfg)?.install(|| {
        data.par_iter()
            .map(
                |gold| match answer_question(&gold.query, &agent, &*searcher, &store, &*backend, &template) {
                    Ok(result) => {
                        let scores = score_qa(&result, gold);
                        QaRecord::new(gold, &result, scores)
                    }
                    Err(e) => {
                        log::warn!("query {}: {e}", gold.query.id);
                        QaRecord::failed(gold, e.to_string())
                    }
                },
            )
            .collect()
    });
    if let Some(path) = &out.results {
        write_jsonl(path, &records).with_context(|| format!("writing {}", path.display()))?;
    }
    let scores: Vec<_> = records.iter().map(|r| r.scores).collect();
    emit(out, &Summary::Qa(aggregate_qa(&scores)?))
}

pub fn trajectories_generate(cfg: &CliConfig, dataset: &Path, out: &Path, checkpoint: Option<PathBuf>) -> Result<()> {
    let data = load_dataset(dataset)?;
    let agent = agent(cfg, TOOL_USE_K)?;
    let backend = backend(cfg)?;
    let searcher = searcher(cfg)?;
    let options = RunOptions {
        workers: workers(cfg)?,
        checkpoint: checkpoint.map(Checkpoint::new),
    };
    let trajectories = generate_trajectories(&data, &agent, &*backend, &*searcher, &options)?;
    write_trajectories(out, &trajectories)?;
    let matched = trajectories.iter().filter(|t| t.matched_gold).count();
    let failed = trajectories.iter().filter(|t| t.error.is_some()).count();
    println!("{} trajectories, {matched} matched gold, {failed} failed", trajectories.len());
    Ok(())
}

pub fn trajectories_export(cfg: &CliConfig, input: &Path, out: &Path) -> Result<()> {
    let trajectories = read_trajectories(input)?;
    let agent = agent(cfg, TOOL_USE_K)?;
    let written = filter_and_export(&trajectories, &agent, out)?;
    println!("wrote {written} training records to {}", out.display());
    Ok(())
}

pub fn map_freebase(dataset: &Path, mapping: &Path, out: &Path, report_path: Option<&Path>) -> Result<()> {
    let raw = load_raw_dataset(dataset)?;
    let total = raw.len();
    let mapping = FreebaseMapping::load(mapping)?;
    let (kept, report) = apply_freebase_mapping(raw, &mapping);
    let lines: Vec<RawGoldRecord> = kept.iter().map(RawGoldRecord::from_gold).collect();
    write_jsonl(out, &lines).with_context(|| format!("writing {}", out.display()))?;
    if let Some(path) = report_path {
        let mut w = BufWriter::new(File::create(path).with_context(|| format!("writing {}", path.display()))?);
        serde_json::to_writer_pretty(&mut w, &report)?;
        writeln!(w)?;
    }
    println!(
        "kept {} of {total} records; dropped {} with {} unmapped MIDs, {} without gold",
        kept.len(),
        report.dropped_records.len(),
        report.unmapped.len(),
        report.no_gold.len()
    );
    for (mid, count) in &report.unmapped {
        log::info!("unmapped {mid} ({count} records)");
    }
    Ok(())
}

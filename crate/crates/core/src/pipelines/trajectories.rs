use std::collections::{HashMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::mpsc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::agent::{build_reader_prompt, build_retrieval_prompt, EntityLinkingAgent, Stage};
use crate::domain::{EntitySet, GoldRecord, Trajectory};
use crate::llm::{ChatBackend, ChatMessage};
use crate::retrieval::EntitySearcher;

/// Version tag carried by every trajectory and training-record line.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct TrajectoryLine {
    schema_version: u32,
    #[serde(flatten)]
    trajectory: Trajectory,
}

/// One supervised example: a prompt without few-shot turns and the
/// completion the agent produced for it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub schema_version: u32,
    pub query_id: String,
    pub stage: Stage,
    pub prompt_messages: Vec<ChatMessage>,
    pub target_completion: String,
    /// Final entities of the source trajectory.
    pub entities: EntitySet,
}

/// Resume state for a generation run: `completed.txt` lists finished query
/// ids, one per line, and `trajectories.jsonl` holds their trajectories.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Checkpoint {
    pub dir: PathBuf,
}

impl Checkpoint {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn completed_path(&self) -> PathBuf {
        self.dir.join("completed.txt")
    }

    pub fn trajectories_path(&self) -> PathBuf {
        self.dir.join("trajectories.jsonl")
    }

    /// Trajectories of completed ids. A trajectory without a matching id
    /// line (the run stopped between the two writes) is ignored.
    pub fn load(&self) -> Result<HashMap<String, Trajectory>, PipelineError> {
        let ids_path = self.completed_path();
        if !ids_path.exists() {
            return Ok(HashMap::new());
        }
        let ids: HashSet<String> = std::fs::read_to_string(&ids_path)
            .map_err(PipelineError::io(&ids_path))?
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(String::from)
            .collect();
        let path = self.trajectories_path();
        if !path.exists() {
            return Ok(HashMap::new());
        }
        Ok(read_trajectories(&path)?
            .into_iter()
            .filter(|t| ids.contains(&t.query.id))
            .map(|t| (t.query.id.clone(), t))
            .collect())
    }

    fn open_append(path: &Path) -> Result<BufWriter<File>, PipelineError> {
        OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map(BufWriter::new)
            .map_err(PipelineError::io(path))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunOptions {
    pub workers: usize,
    pub checkpoint: Option<Checkpoint>,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            workers: std::thread::available_parallelism().map_or(1, |n| n.get()),
            checkpoint: None,
        }
    }
}

fn serialize_line<T: Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("trajectory types serialize")
}

/// Appends trajectories to the checkpoint as they arrive.
fn checkpoint_writer(
    checkpoint: &Checkpoint,
    rx: mpsc::Receiver<Trajectory>,
) -> Result<(), PipelineError> {
    let traj_path = checkpoint.trajectories_path();
    let ids_path = checkpoint.completed_path();
    let mut trajectories = Checkpoint::open_append(&traj_path)?;
    let mut ids = Checkpoint::open_append(&ids_path)?;
    for trajectory in rx {
        let id = trajectory.query.id.clone();
        let line = serialize_line(&TrajectoryLine {
            schema_version: SCHEMA_VERSION,
            trajectory,
        });
        writeln!(trajectories, "{line}")
            .and_then(|_| trajectories.flush())
            .map_err(PipelineError::io(&traj_path))?;
        writeln!(ids, "{id}").and_then(|_| ids.flush()).map_err(PipelineError::io(&ids_path))?;
    }
    Ok(())
}

fn run_one(
    record: &GoldRecord,
    agent: &EntityLinkingAgent,
    backend: &dyn ChatBackend,
    searcher: &dyn EntitySearcher,
) -> Trajectory {
    let mut trajectory = match agent.link(&record.query, searcher, backend) {
        Ok(outcome) => outcome.trajectory,
        Err(e) => {
            log::warn!("query {}: {e}", record.query.id);
            Trajectory::failed(record.query.clone(), e)
        }
    };
    trajectory.score_against(&record.gold_entities);
    trajectory
}

/// Runs the agent over every record with few-shot prompts and scores each
/// trajectory against its gold set. Output is in dataset order. With a
/// checkpoint, records already completed are loaded instead of re-run and
/// new ones are appended as they finish.
pub fn generate_trajectories(
    dataset: &[GoldRecord],
    agent: &EntityLinkingAgent,
    backend: &dyn ChatBackend,
    searcher: &dyn EntitySearcher,
    options: &RunOptions,
) -> Result<Vec<Trajectory>, PipelineError> {
    if !agent.config.fewshot_enabled {
        return Err(PipelineError::Config("trajectory generation needs few-shot prompts".into()));
    }
    if options.workers == 0 {
        return Err(PipelineError::Config("workers must be at least 1".into()));
    }
    let mut ids = HashSet::new();
    if let Some(dup) = dataset.iter().find(|r| !ids.insert(r.query.id.as_str())) {
        return Err(PipelineError::DuplicateQueryId(dup.query.id.clone()));
    }

    let mut done = match &options.checkpoint {
        Some(c) => {
            std::fs::create_dir_all(&c.dir).map_err(PipelineError::io(&c.dir))?;
            c.load()?
        }
        None => HashMap::new(),
    };
    let pending: Vec<&GoldRecord> = dataset.iter().filter(|r| !done.contains_key(&r.query.id)).collect();
    if !done.is_empty() {
        log::info!("resuming: {} done, {} pending", dataset.len() - pending.len(), pending.len());
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(options.workers)
        .build()
        .map_err(|e| PipelineError::Config(e.to_string()))?;

    let fresh: Vec<Trajectory> = std::thread::scope(|scope| {
        let (tx, rx) = mpsc::channel::<Trajectory>();
        let writer = options
            .checkpoint
            .as_ref()
            .map(|c| scope.spawn(move || checkpoint_writer(c, rx)));
        let fresh: Vec<Trajectory> = pool.install(|| {
            pending
                .par_iter()
                .map_with(tx, |tx, record| {
                    let t = run_one(record, agent, backend, searcher);
                    let _ = tx.send(t.clone());
                    t
                })
                .collect()
        });
        if let Some(w) = writer {
            w.join().expect("checkpoint writer panicked")?;
        }
        Ok::<_, PipelineError>(fresh)
    })?;

    for t in fresh {
        done.insert(t.query.id.clone(), t);
    }
    Ok(dataset
        .iter()
        .map(|r| done.remove(&r.query.id).expect("every record has a trajectory"))
        .collect())
}

pub fn write_trajectories(path: &Path, trajectories: &[Trajectory]) -> Result<(), PipelineError> {
    let file = File::create(path).map_err(PipelineError::io(path))?;
    let mut out = BufWriter::new(file);
    for t in trajectories {
        #[derive(Serialize)]
        struct Line<'a> {
            schema_version: u32,
            #[serde(flatten)]
            trajectory: &'a Trajectory,
        }
        let line = serialize_line(&Line {
            schema_version: SCHEMA_VERSION,
            trajectory: t,
        });
        writeln!(out, "{line}").map_err(PipelineError::io(path))?;
    }
    out.flush().map_err(PipelineError::io(path))
}

fn read_versioned<T>(
    path: &Path,
    mut parse: impl FnMut(&str) -> Result<(u32, T), serde_json::Error>,
) -> Result<Vec<T>, PipelineError> {
    let file = File::open(path).map_err(PipelineError::io(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(PipelineError::io(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let (version, value) = parse(&line).map_err(|e| PipelineError::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            reason: e.to_string(),
        })?;
        if version != SCHEMA_VERSION {
            return Err(PipelineError::SchemaVersion {
                path: path.to_path_buf(),
                found: version,
                expected: SCHEMA_VERSION,
            });
        }
        out.push(value);
    }
    Ok(out)
}

pub fn read_trajectories(path: &Path) -> Result<Vec<Trajectory>, PipelineError> {
    read_versioned(path, |line| {
        serde_json::from_str::<TrajectoryLine>(line).map(|l| (l.schema_version, l.trajectory))
    })
}

pub fn read_training_records(path: &Path) -> Result<Vec<TrainingRecord>, PipelineError> {
    read_versioned(path, |line| {
        serde_json::from_str::<TrainingRecord>(line).map(|r| (r.schema_version, r))
    })
}

/// The two training records of each matched trajectory, in order.
pub fn export_records(
    trajectories: &[Trajectory],
    agent: &EntityLinkingAgent,
) -> Result<Vec<TrainingRecord>, PipelineError> {
    let mut records = Vec::new();
    for t in trajectories.iter().filter(|t| t.matched_gold && t.error.is_none()) {
        let record = |stage, prompt_messages, target: &str| TrainingRecord {
            schema_version: SCHEMA_VERSION,
            query_id: t.query.id.clone(),
            stage,
            prompt_messages,
            target_completion: target.to_string(),
            entities: t.final_entities.clone(),
        };
        let retrieval = build_retrieval_prompt(&t.query, &agent.retrieval_template, false)?;
        records.push(record(Stage::Retrieval, retrieval, &t.retrieval_output));
        if t.candidate_lists.is_empty() {
            // A no-entity trajectory has no reader turn to learn from.
            continue;
        }
        let reader = build_reader_prompt(&t.query, &t.candidate_lists, &agent.reader_template, false)?;
        records.push(record(Stage::Reader, reader, &t.reader_output));
    }
    Ok(records)
}

/// Writes the training records of matched trajectories as JSON lines and
/// returns how many were written. The file is created even when empty.
pub fn filter_and_export(
    trajectories: &[Trajectory],
    agent: &EntityLinkingAgent,
    out: &Path,
) -> Result<usize, PipelineError> {
    let records = export_records(trajectories, agent)?;
    let file = File::create(out).map_err(PipelineError::io(out))?;
    let mut w = BufWriter::new(file);
    for r in &records {
        writeln!(w, "{}", serialize_line(r)).map_err(PipelineError::io(out))?;
    }
    w.flush().map_err(PipelineError::io(out))?;
    Ok(records.len())
}

//! End-to-end flows built on the agent: dataset loading and Freebase
//! remapping, the linking-as-retrieval QA pipeline, trajectory generation
//! and export for fine-tuning, and corpus ingestion.

mod dataset;
mod freebase;
mod ingest;
mod qa;
mod trajectories;

pub use dataset::{load_dataset, load_raw_dataset, parse_dataset, RawGoldRecord};
pub use freebase::{apply_freebase_mapping, sparql_topic_mids, FreebaseMapping, UnmappedReport};
pub use ingest::{first_paragraph, ingest_corpus, stable_doc_id, IngestReport, Ingestor, FALLBACK_PARAGRAPH_CHARS};
pub use qa::{answer_question, extract_answer, score_qa, AnswerTemplate, QaResult};
pub use trajectories::{
    export_records, filter_and_export, generate_trajectories, read_training_records, read_trajectories,
    write_trajectories, Checkpoint, RunOptions, TrainingRecord, SCHEMA_VERSION,
};

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::agent::{AgentError, TemplateError};
use crate::domain::DomainError;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {reason}")]
    Parse { path: PathBuf, line: usize, reason: String },
    #[error("{path}:{line}: {source}")]
    InvalidRecord {
        path: PathBuf,
        line: usize,
        #[source]
        source: DomainError,
    },
    #[error("mapping line {line}: {reason}")]
    InvalidMapping { line: usize, reason: String },
    #[error("{path}: schema version {found}, expected {expected}")]
    SchemaVersion { path: PathBuf, found: u32, expected: u32 },
    #[error("query id {0:?} appears more than once")]
    DuplicateQueryId(String),
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Agent(#[from] AgentError),
}

impl PipelineError {
    pub(crate) fn io(path: &Path) -> impl FnOnce(std::io::Error) -> Self + '_ {
        move |source| Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

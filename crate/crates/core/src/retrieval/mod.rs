//! Entity search backends. All of them answer the same question: given a
//! mention and a budget `k`, return a ranked [`CandidateList`].

mod index;
mod remote;
mod store;
mod tokenize;

pub use index::{bm25_score, build_index, idf, Bm25Params, DocEntry, Posting, TitleIndex, INDEX_FORMAT_VERSION};
pub use remote::{KbBackend, KbClient, KbClientConfig};
pub use store::{read_corpus_jsonl, CorpusStore};
pub use tokenize::tokenize;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{CandidateList, EntityRef, Mention};

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("duplicate title {title:?} (documents {first:?} and {second:?})")]
    DuplicateTitle { title: String, first: String, second: String },
    #[error("duplicate document id {0:?}")]
    DuplicateDocId(String),
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("index format version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("index at {path} is corrupt: {reason}")]
    Corrupt { path: PathBuf, reason: String },
    #[error("{path}:{line}: {reason}")]
    Parse { path: PathBuf, line: usize, reason: String },
    #[error("entity {0} not found")]
    NotFound(EntityRef),
    #[error("entity {0} cannot be fetched from a local corpus")]
    UnsupportedNamespace(EntityRef),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl RetrievalError {
    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Self {
        let path = path.into();
        move |source| RetrievalError::Io { path, source }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SearchError {
    #[error("search backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("search quota exceeded: {0}")]
    QuotaExceeded(String),
    #[error("malformed search response: {0}")]
    MalformedResponse(String),
    #[error("search cache error: {0}")]
    Cache(String),
    #[error("invalid mention: {0}")]
    InvalidMention(String),
}

/// A handle the agent can query for candidates.
pub trait EntitySearcher: Send + Sync {
    fn search(&self, mention: &Mention, k: usize) -> Result<CandidateList, SearchError>;
}

impl<T: EntitySearcher + ?Sized> EntitySearcher for std::sync::Arc<T> {
    fn search(&self, mention: &Mention, k: usize) -> Result<CandidateList, SearchError> {
        (**self).search(mention, k)
    }
}

impl<T: EntitySearcher + ?Sized> EntitySearcher for &T {
    fn search(&self, mention: &Mention, k: usize) -> Result<CandidateList, SearchError> {
        (**self).search(mention, k)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchBackend {
    LocalBm25,
    WikidataApi,
    WikipediaApi,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub k: usize,
    pub backend: SearchBackend,
}

impl SearchConfig {
    pub fn new(k: usize, backend: SearchBackend) -> Option<Self> {
        (k >= 1).then_some(Self { k, backend })
    }
}

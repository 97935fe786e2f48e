#![allow(dead_code)]

use std::path::{Path, PathBuf};

use ela_core::domain::{Document, GoldRecord};
use ela_core::llm::ScriptedBackend;
use ela_core::pipelines::load_dataset;
use ela_core::retrieval::{build_index, read_corpus_jsonl, Bm25Params, CorpusStore, TitleIndex};

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

/// The 50-article toy corpus with its index and store.
pub struct Toy {
    pub docs: Vec<Document>,
    pub index: TitleIndex,
    pub store: CorpusStore,
}

pub fn toy() -> Toy {
    let docs = read_corpus_jsonl(&fixture("toy/corpus.jsonl")).unwrap();
    let index = build_index(docs.clone(), Bm25Params::default()).unwrap();
    let store = CorpusStore::new(docs.clone()).unwrap();
    Toy { docs, index, store }
}

pub fn dataset(name: &str) -> Vec<GoldRecord> {
    load_dataset(&fixture(name)).unwrap()
}

pub fn script(name: &str) -> ScriptedBackend {
    ScriptedBackend::from_json(&std::fs::read_to_string(fixture(name)).unwrap()).unwrap()
}

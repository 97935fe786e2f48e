use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use super::RetrievalError;
use crate::domain::{normalize_title, Document, EntityRef, Namespace};

/// Full documents, addressable by normalized title or by `doc_id`.
#[derive(Debug, Clone, Default)]
pub struct CorpusStore {
    docs: Vec<Document>,
    by_title: HashMap<String, usize>,
    by_id: HashMap<String, usize>,
}

impl CorpusStore {
    pub fn new(docs: impl IntoIterator<Item = Document>) -> Result<Self, RetrievalError> {
        let mut store = Self::default();
        for doc in docs {
            let title = normalize_title(&doc.title);
            if let Some(&prev) = store.by_title.get(&title) {
                return Err(RetrievalError::DuplicateTitle {
                    title: doc.title,
                    first: store.docs[prev].doc_id.clone(),
                    second: doc.doc_id,
                });
            }
            let id_key = normalize_title(&doc.doc_id);
            if store.by_id.contains_key(&id_key) {
                return Err(RetrievalError::DuplicateDocId(doc.doc_id));
            }
            let i = store.docs.len();
            store.by_title.insert(title, i);
            store.by_id.insert(id_key, i);
            store.docs.push(doc);
        }
        Ok(store)
    }

    /// Reads corpus JSON lines: `{"doc_id", "title", "first_paragraph", "text"}`.
    pub fn load_jsonl(path: &Path) -> Result<Self, RetrievalError> {
        Self::new(read_corpus_jsonl(path)?)
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn documents(&self) -> &[Document] {
        &self.docs
    }

    pub fn fetch_document(&self, entity: &EntityRef) -> Result<&Document, RetrievalError> {
        let slot = match entity.namespace() {
            Namespace::ArticleTitle => self.by_title.get(entity.key()),
            Namespace::LocalDocId => self.by_id.get(&normalize_title(entity.key())),
            Namespace::WikidataQid => return Err(RetrievalError::UnsupportedNamespace(entity.clone())),
        };
        slot.map(|&i| &self.docs[i])
            .ok_or_else(|| RetrievalError::NotFound(entity.clone()))
    }
}

pub fn read_corpus_jsonl(path: &Path) -> Result<Vec<Document>, RetrievalError> {
    let file = File::open(path).map_err(RetrievalError::io(path))?;
    let mut docs = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(RetrievalError::io(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let doc: Document = serde_json::from_str(&line).map_err(|e| RetrievalError::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            reason: e.to_string(),
        })?;
        docs.push(doc);
    }
    Ok(docs)
}

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::domain::{normalize_title, Document};

/// Length of the description taken from pages without a blank line.
pub const FALLBACK_PARAGRAPH_CHARS: usize = 500;

/// Hex prefix of the SHA-256 of the normalized title.
pub fn stable_doc_id(title: &str) -> String {
    let digest = Sha256::digest(normalize_title(title).as_bytes());
    hex::encode(&digest[..8])
}

/// Text up to the first blank line after some content, else the first
/// [`FALLBACK_PARAGRAPH_CHARS`] characters. Always a prefix of `text`
/// with trailing whitespace removed.
pub fn first_paragraph(text: &str) -> &str {
    let mut offset = 0;
    let mut seen_content = false;
    for line in text.split_inclusive('\n') {
        if line.trim().is_empty() {
            if seen_content {
                return text[..offset].trim_end();
            }
        } else {
            seen_content = true;
        }
        offset += line.len();
    }
    let cut = text.char_indices().nth(FALLBACK_PARAGRAPH_CHARS).map_or(text.len(), |(i, _)| i);
    text[..cut].trim_end()
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    /// Titles skipped because an earlier page had the same normalized title.
    pub duplicates: Vec<String>,
    /// Pages whose title is empty after normalization.
    pub untitled: usize,
}

/// Streaming page-to-document conversion; the first page per normalized
/// title is kept.
#[derive(Debug, Default)]
pub struct Ingestor {
    seen: HashMap<String, String>,
    report: IngestReport,
}

impl Ingestor {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, title: &str, full_text: String) -> Option<Document> {
        let key = normalize_title(title);
        if key.is_empty() {
            self.report.untitled += 1;
            return None;
        }
        if let Some(kept) = self.seen.get(&key) {
            log::warn!("duplicate title {title:?}; keeping {kept}");
            self.report.duplicates.push(title.to_string());
            return None;
        }
        let doc_id = stable_doc_id(title);
        self.seen.insert(key, doc_id.clone());
        Some(Document {
            doc_id,
            title: title.to_string(),
            first_paragraph: first_paragraph(&full_text).to_string(),
            full_text,
        })
    }

    pub fn report(&self) -> &IngestReport {
        &self.report
    }

    pub fn finish(self) -> IngestReport {
        self.report
    }
}

/// Converts `(title, full_text)` pages into documents.
pub fn ingest_corpus(pages: impl IntoIterator<Item = (String, String)>) -> (Vec<Document>, IngestReport) {
    let mut ingestor = Ingestor::new();
    let docs = pages
        .into_iter()
        .filter_map(|(title, text)| ingestor.push(&title, text))
        .collect();
    (docs, ingestor.finish())
}

//! Okapi BM25 over article titles.
//!
//! Only titles are indexed; first paragraphs ride along in the document
//! table so they can be shown to the reader as candidate descriptions.
//! Documents are stored sorted by `doc_id`, so ordinal order is also the
//! tie-break order.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{tokenize, EntitySearcher, RetrievalError, SearchError};
use crate::domain::{normalize_title, CandidateList, Document, EntityRef, Hit, Mention};

pub const INDEX_FORMAT_VERSION: u32 = 1;

const MANIFEST_FILE: &str = "manifest.json";
const DOC_TABLE_FILE: &str = "doc_table.jsonl";
const POSTINGS_FILE: &str = "postings.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 1.2, b: 0.75 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Posting {
    pub ordinal: u32,
    pub tf: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocEntry {
    pub doc_id: String,
    pub title: String,
    pub first_paragraph: String,
    pub title_len: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TitleIndex {
    params: Bm25Params,
    postings: HashMap<String, Vec<Posting>>,
    docs: Vec<DocEntry>,
    avg_title_len: f64,
}

/// `ln(1 + (N - df + 0.5) / (df + 0.5))`; positive for every `df <= N`.
pub fn idf(doc_count: usize, df: usize) -> f64 {
    let n = doc_count as f64;
    let df = df as f64;
    (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
}

fn term_weight(idf: f64, tf: u32, title_len: u32, avg_len: f64, p: Bm25Params) -> f64 {
    let tf = tf as f64;
    let len_norm = 1.0 - p.b + p.b * title_len as f64 / avg_len;
    idf * (tf * (p.k1 + 1.0)) / (tf + p.k1 * len_norm)
}

fn mean_len(docs: &[DocEntry]) -> f64 {
    let total: u64 = docs.iter().map(|d| d.title_len as u64).sum();
    total as f64 / docs.len() as f64
}

pub fn build_index(
    corpus: impl IntoIterator<Item = Document>,
    params: Bm25Params,
) -> Result<TitleIndex, RetrievalError> {
    let mut by_title: HashMap<String, String> = HashMap::new();
    let mut docs = Vec::new();
    for doc in corpus {
        let key = normalize_title(&doc.title);
        if let Some(first) = by_title.get(&key) {
            return Err(RetrievalError::DuplicateTitle {
                title: doc.title,
                first: first.clone(),
                second: doc.doc_id,
            });
        }
        by_title.insert(key, doc.doc_id.clone());
        docs.push(doc);
    }
    if docs.is_empty() {
        return Err(RetrievalError::EmptyCorpus);
    }
    docs.sort_by(|a, b| a.doc_id.cmp(&b.doc_id));
    if let Some(w) = docs.windows(2).find(|w| w[0].doc_id == w[1].doc_id) {
        return Err(RetrievalError::DuplicateDocId(w[0].doc_id.clone()));
    }

    let mut postings: HashMap<String, Vec<Posting>> = HashMap::new();
    let mut table = Vec::with_capacity(docs.len());
    for (ordinal, doc) in docs.into_iter().enumerate() {
        let terms = tokenize(&doc.title);
        let mut counts: HashMap<String, u32> = HashMap::new();
        for t in &terms {
            *counts.entry(t.clone()).or_default() += 1;
        }
        for (term, tf) in counts {
            postings.entry(term).or_default().push(Posting {
                ordinal: ordinal as u32,
                tf,
            });
        }
        table.push(DocEntry {
            doc_id: doc.doc_id,
            title: doc.title,
            first_paragraph: doc.first_paragraph,
            title_len: terms.len() as u32,
        });
    }
    // Ordinals were pushed in increasing order, so every list is sorted.
    let avg_title_len = mean_len(&table);
    Ok(TitleIndex {
        params,
        postings,
        docs: table,
        avg_title_len,
    })
}

/// BM25 of one document for an already tokenized query. Repeated query
/// terms count once per occurrence.
pub fn bm25_score(query_terms: &[String], ordinal: usize, index: &TitleIndex) -> f64 {
    let doc = &index.docs[ordinal];
    let mut score = 0.0;
    for term in query_terms {
        let Some(list) = index.postings.get(term) else {
            continue;
        };
        if let Ok(pos) = list.binary_search_by_key(&(ordinal as u32), |p| p.ordinal) {
            let w = idf(index.docs.len(), list.len());
            score += term_weight(w, list[pos].tf, doc.title_len, index.avg_title_len, index.params);
        }
    }
    score
}

#[derive(PartialEq)]
struct Ranked {
    score: f64,
    ordinal: u32,
}

impl Eq for Ranked {}

impl Ord for Ranked {
    // "Greater" means better: higher score, then lower ordinal.
    fn cmp(&self, other: &Self) -> Ordering {
        self.score
            .total_cmp(&other.score)
            .then_with(|| other.ordinal.cmp(&self.ordinal))
    }
}

impl PartialOrd for Ranked {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl TitleIndex {
    pub fn params(&self) -> Bm25Params {
        self.params
    }

    pub fn doc_count(&self) -> usize {
        self.docs.len()
    }

    pub fn avg_title_len(&self) -> f64 {
        self.avg_title_len
    }

    pub fn docs(&self) -> &[DocEntry] {
        &self.docs
    }

    pub fn document_frequency(&self, term: &str) -> usize {
        self.postings.get(term).map_or(0, Vec::len)
    }

    pub fn postings(&self, term: &str) -> &[Posting] {
        self.postings.get(term).map_or(&[], Vec::as_slice)
    }

    pub fn term_count(&self) -> usize {
        self.postings.len()
    }

    /// Top-`k` `(ordinal, score)` pairs, best first, ties by ascending
    /// `doc_id`. Documents scoring zero are left out.
    pub fn top_k(&self, query_terms: &[String], k: usize) -> Vec<(usize, f64)> {
        if k == 0 {
            return Vec::new();
        }
        let mut acc: HashMap<u32, f64> = HashMap::new();
        for term in query_terms {
            let Some(list) = self.postings.get(term) else {
                continue;
            };
            let w = idf(self.docs.len(), list.len());
            for p in list {
                let doc = &self.docs[p.ordinal as usize];
                *acc.entry(p.ordinal).or_insert(0.0) +=
                    term_weight(w, p.tf, doc.title_len, self.avg_title_len, self.params);
            }
        }
        // Min-heap of the best k seen so far.
        let mut heap: BinaryHeap<std::cmp::Reverse<Ranked>> = BinaryHeap::with_capacity(k + 1);
        for (ordinal, score) in acc {
            if score <= 0.0 {
                continue;
            }
            heap.push(std::cmp::Reverse(Ranked { score, ordinal }));
            if heap.len() > k {
                heap.pop();
            }
        }
        let mut ranked: Vec<Ranked> = heap.into_iter().map(|r| r.0).collect();
        ranked.sort_by(|a, b| b.cmp(a));
        ranked
            .into_iter()
            .map(|r| (r.ordinal as usize, r.score))
            .collect()
    }

    pub fn search(&self, mention: &Mention, k: usize) -> CandidateList {
        let terms = tokenize(&mention.surface);
        let hits = self.top_k(&terms, k).into_iter().map(|(ordinal, score)| {
            let doc = &self.docs[ordinal];
            Hit {
                entity: EntityRef::title(&doc.title)
                    .or_else(|_| EntityRef::doc_id(&doc.doc_id))
                    .expect("indexed document has a title or id"),
                title: doc.title.clone(),
                description: doc.first_paragraph.clone(),
                score,
            }
        });
        CandidateList::from_hits(mention.clone(), k, hits)
    }

    /// Writes the index as a directory: a manifest carrying the format
    /// version, stats and parameters, plus the document table and postings
    /// as JSON lines.
    pub fn save(&self, dir: &Path) -> Result<(), RetrievalError> {
        fs::create_dir_all(dir).map_err(RetrievalError::io(dir))?;

        let manifest = Manifest {
            format_version: INDEX_FORMAT_VERSION,
            doc_count: self.docs.len(),
            term_count: self.postings.len(),
            avg_title_len: self.avg_title_len,
            params: self.params,
        };
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        fs::write(&path, text + "\n").map_err(RetrievalError::io(&path))?;

        let path = dir.join(DOC_TABLE_FILE);
        write_lines(&path, self.docs.iter())?;

        let mut terms: Vec<&String> = self.postings.keys().collect();
        terms.sort();
        let path = dir.join(POSTINGS_FILE);
        write_lines(
            &path,
            terms.into_iter().map(|t| PostingsRow {
                term: t.clone(),
                postings: self.postings[t].iter().map(|p| (p.ordinal, p.tf)).collect(),
            }),
        )
    }

    pub fn load(dir: &Path) -> Result<Self, RetrievalError> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(RetrievalError::io(&path))?;
        let version: VersionProbe = serde_json::from_str(&text).map_err(|e| corrupt(&path, e))?;
        if version.format_version != INDEX_FORMAT_VERSION {
            return Err(RetrievalError::VersionMismatch {
                found: version.format_version,
                expected: INDEX_FORMAT_VERSION,
            });
        }
        let manifest: Manifest = serde_json::from_str(&text).map_err(|e| corrupt(&path, e))?;

        let path = dir.join(DOC_TABLE_FILE);
        let docs: Vec<DocEntry> = read_lines(&path)?;
        if docs.len() != manifest.doc_count || docs.is_empty() {
            return Err(corrupt(&path, format!("expected {} documents, found {}", manifest.doc_count, docs.len())));
        }
        if docs.windows(2).any(|w| w[0].doc_id >= w[1].doc_id) {
            return Err(corrupt(&path, "documents are not sorted by doc_id"));
        }
        let avg = mean_len(&docs);
        if avg.to_bits() != manifest.avg_title_len.to_bits() {
            return Err(corrupt(&path, "average title length disagrees with manifest"));
        }

        let path = dir.join(POSTINGS_FILE);
        let rows: Vec<PostingsRow> = read_lines(&path)?;
        if rows.len() != manifest.term_count {
            return Err(corrupt(&path, format!("expected {} terms, found {}", manifest.term_count, rows.len())));
        }
        let mut postings = HashMap::with_capacity(rows.len());
        for row in rows {
            let list: Vec<Posting> = row
                .postings
                .into_iter()
                .map(|(ordinal, tf)| Posting { ordinal, tf })
                .collect();
            let sorted = list.windows(2).all(|w| w[0].ordinal < w[1].ordinal);
            let in_range = list.iter().all(|p| (p.ordinal as usize) < docs.len() && p.tf > 0);
            if list.is_empty() || !sorted || !in_range {
                return Err(corrupt(&path, format!("bad posting list for term {:?}", row.term)));
            }
            postings.insert(row.term, list);
        }
        Ok(Self {
            params: manifest.params,
            postings,
            docs,
            avg_title_len: manifest.avg_title_len,
        })
    }
}

impl EntitySearcher for TitleIndex {
    fn search(&self, mention: &Mention, k: usize) -> Result<CandidateList, SearchError> {
        Ok(TitleIndex::search(self, mention, k))
    }
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    doc_count: usize,
    term_count: usize,
    avg_title_len: f64,
    params: Bm25Params,
}

#[derive(Deserialize)]
struct VersionProbe {
    format_version: u32,
}

#[derive(Serialize, Deserialize)]
struct PostingsRow {
    term: String,
    postings: Vec<(u32, u32)>,
}

fn corrupt(path: &Path, reason: impl ToString) -> RetrievalError {
    RetrievalError::Corrupt {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    }
}

fn write_lines<T: Serialize>(path: &Path, rows: impl Iterator<Item = T>) -> Result<(), RetrievalError> {
    let file = File::create(path).map_err(RetrievalError::io(path))?;
    let mut out = BufWriter::new(file);
    for row in rows {
        serde_json::to_writer(&mut out, &row).expect("row serializes");
        out.write_all(b"\n").map_err(RetrievalError::io(path))?;
    }
    out.flush().map_err(RetrievalError::io(path))
}

fn read_lines<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, RetrievalError> {
    let file = File::open(path).map_err(RetrievalError::io(path))?;
    let mut rows = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(RetrievalError::io(path))?;
        if line.trim().is_empty() {
            continue;
        }
        rows.push(serde_json::from_str(&line).map_err(|e| RetrievalError::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            reason: e.to_string(),
        })?);
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(id: &str, title: &str) -> Document {
        Document {
            doc_id: id.into(),
            title: title.into(),
            first_paragraph: format!("About {title}."),
            full_text: format!("About {title}.\n\nMore."),
        }
    }

    fn toy() -> Vec<Document> {
        vec![
            doc("d3", "The Girl in White"),
            doc("d1", "Girl"),
            doc("d2", "White Christmas (film)"),
        ]
    }

    fn mention(s: &str) -> Mention {
        Mention::new(s, "q").unwrap()
    }

    #[test]
    fn stats_by_construction() {
        let idx = build_index(toy(), Bm25Params::default()).unwrap();
        assert_eq!(idx.doc_count(), 3);
        // Title lengths 4, 1, 3.
        assert_eq!(idx.avg_title_len(), (4.0 + 1.0 + 3.0) / 3.0);
        assert_eq!(idx.document_frequency("girl"), 2);
        assert_eq!(idx.docs()[0].doc_id, "d1");
    }

    #[test]
    fn duplicate_and_empty_corpus() {
        let err = build_index(vec![doc("a", "NBA"), doc("b", "nba")], Bm25Params::default()).unwrap_err();
        match err {
            RetrievalError::DuplicateTitle { first, second, .. } => assert_eq!((first.as_str(), second.as_str()), ("a", "b")),
            e => panic!("{e}"),
        }
        assert!(matches!(build_index(vec![], Bm25Params::default()), Err(RetrievalError::EmptyCorpus)));
        assert!(matches!(
            build_index(vec![doc("a", "x"), doc("a", "y")], Bm25Params::default()),
            Err(RetrievalError::DuplicateDocId(_))
        ));
    }

    #[test]
    fn absent_terms_score_zero() {
        let idx = build_index(toy(), Bm25Params::default()).unwrap();
        let q = vec!["zebra".to_string()];
        for ord in 0..idx.doc_count() {
            assert_eq!(bm25_score(&q, ord, &idx), 0.0);
        }
        assert!(idx.search(&mention("zebra"), 5).is_empty());
    }

    #[test]
    fn single_doc_closed_form() {
        let idx = build_index(vec![doc("x", "Once a Gentleman")], Bm25Params::default()).unwrap();
        let q = tokenize("Once a Gentleman");
        // N=1, df=1, tf=1, len=avg: each term weighs ln(1 + 0.5/1.5) * 2.2 / 2.2.
        let per_term = (1.0f64 + 0.5 / 1.5).ln();
        let expected = per_term + per_term + per_term;
        assert!((bm25_score(&q, 0, &idx) - expected).abs() < 1e-12);
    }

    #[test]
    fn idf_is_positive_and_decreasing() {
        for n in 1..30 {
            let values: Vec<f64> = (0..=n).map(|df| idf(n, df)).collect();
            assert!(values.iter().all(|v| *v > 0.0));
            assert!(values.windows(2).all(|w| w[0] > w[1]));
        }
    }

    #[test]
    fn search_examples() {
        let idx = build_index(toy(), Bm25Params::default()).unwrap();
        let list = idx.search(&mention("The Girl In White"), 5);
        assert_eq!(list.candidates[0].title, "The Girl in White");
        assert_eq!(list.candidates[0].description, "About The Girl in White.");
        list.validate().unwrap();
        assert!(idx.search(&mention("girl"), 100).len() <= idx.doc_count());
    }

    #[test]
    fn save_load_round_trip_and_version_guard() {
        let dir = tempfile::tempdir().unwrap();
        let idx = build_index(toy(), Bm25Params { k1: 0.9, b: 0.4 }).unwrap();
        idx.save(dir.path()).unwrap();
        let back = TitleIndex::load(dir.path()).unwrap();
        assert_eq!(back, idx);

        let manifest = dir.path().join(MANIFEST_FILE);
        let text = fs::read_to_string(&manifest).unwrap().replace("\"format_version\": 1", "\"format_version\": 99");
        fs::write(&manifest, text).unwrap();
        assert!(matches!(
            TitleIndex::load(dir.path()),
            Err(RetrievalError::VersionMismatch { found: 99, expected: 1 })
        ));
    }

    #[test]
    fn load_rejects_out_of_range_postings() {
        let dir = tempfile::tempdir().unwrap();
        build_index(toy(), Bm25Params::default()).unwrap().save(dir.path()).unwrap();
        let path = dir.path().join(POSTINGS_FILE);
        let text = fs::read_to_string(&path).unwrap().replace("[[0,1]", "[[7,1]");
        fs::write(&path, text).unwrap();
        assert!(matches!(TitleIndex::load(dir.path()), Err(RetrievalError::Corrupt { .. })));
    }
}

//! Core vocabulary shared by every stage of the linker: queries, mentions,
//! entity references, candidates and the records produced per query.
//!
//! Everything here is an immutable value type. Entity identity follows two
//! rules: Wikidata QIDs compare byte-exactly, titles and local document ids
//! compare after [`normalize_title`].

use std::borrow::Cow;
use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::fmt;
use std::hash::{Hash, Hasher};

use once_cell::sync::Lazy;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

static QID_RE: Lazy<Regex> = Lazy::new(|| Regex::new(r"^Q[0-9]+$").unwrap());

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DomainError {
    #[error("query text is empty")]
    EmptyQuery,
    #[error("mention surface is empty")]
    EmptyMention,
    #[error("mention surface contains a newline: {0:?}")]
    MultilineMention(String),
    #[error("entity key is empty")]
    EmptyKey,
    #[error("not a Wikidata QID: {0:?}")]
    InvalidQid(String),
    #[error("candidate ranks must run 1..=n, found rank {found} at position {position}")]
    RankGap { position: usize, found: u32 },
    #[error("candidate scores must be non-increasing (rank {rank})")]
    ScoreIncrease { rank: u32 },
    #[error("candidate list repeats entity {0}")]
    DuplicateCandidate(EntityRef),
    #[error("candidate list has {len} entries but only {k} were requested")]
    TooManyCandidates { len: usize, k: usize },
    #[error("gold entities mix namespaces ({0} and {1})")]
    MixedNamespace(Namespace, Namespace),
}

/// Unicode simple case folding applied per code point.
pub fn case_fold(text: &str) -> String {
    text.chars().map(fold_char).collect()
}

pub(crate) fn fold_char(c: char) -> char {
    if c.is_ascii() {
        return c.to_ascii_lowercase();
    }
    unicode_case_mapping::case_folded(c)
        .and_then(|cp| char::from_u32(cp.get()))
        .unwrap_or(c)
}

/// Canonical form for article titles: case-folded, underscores read as
/// spaces, whitespace runs collapsed and the ends trimmed.
pub fn normalize_title(raw: &str) -> String {
    let mut out = String::with_capacity(raw.len());
    for word in raw
        .split(|c: char| c == '_' || c.is_whitespace())
        .filter(|w| !w.is_empty())
    {
        if !out.is_empty() {
            out.push(' ');
        }
        out.extend(word.chars().map(fold_char));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Namespace {
    WikidataQid,
    ArticleTitle,
    LocalDocId,
}

impl fmt::Display for Namespace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Namespace::WikidataQid => "wikidata_qid",
            Namespace::ArticleTitle => "article_title",
            Namespace::LocalDocId => "local_doc_id",
        })
    }
}

/// A knowledge-base entity identity.
///
/// Equality, ordering and hashing all go through the canonical key, so a
/// `HashSet<EntityRef>` or `BTreeSet<EntityRef>` deduplicates exactly as
/// [`entity_eq`] does.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "RawEntityRef")]
pub struct EntityRef {
    namespace: Namespace,
    key: String,
}

#[derive(Deserialize)]
struct RawEntityRef {
    namespace: Namespace,
    key: String,
}

impl TryFrom<RawEntityRef> for EntityRef {
    type Error = DomainError;

    fn try_from(raw: RawEntityRef) -> Result<Self, Self::Error> {
        EntityRef::new(raw.namespace, raw.key)
    }
}

impl EntityRef {
    pub fn new(namespace: Namespace, key: impl Into<String>) -> Result<Self, DomainError> {
        let key = key.into();
        let key = match namespace {
            Namespace::WikidataQid => {
                if key.is_empty() {
                    return Err(DomainError::EmptyKey);
                }
                if !QID_RE.is_match(&key) {
                    return Err(DomainError::InvalidQid(key));
                }
                key
            }
            Namespace::ArticleTitle => normalize_title(&key),
            Namespace::LocalDocId => key.trim().to_string(),
        };
        if key.is_empty() {
            return Err(DomainError::EmptyKey);
        }
        Ok(Self { namespace, key })
    }

    pub fn qid(key: impl Into<String>) -> Result<Self, DomainError> {
        Self::new(Namespace::WikidataQid, key)
    }

    pub fn title(key: impl Into<String>) -> Result<Self, DomainError> {
        Self::new(Namespace::ArticleTitle, key)
    }

    pub fn doc_id(key: impl Into<String>) -> Result<Self, DomainError> {
        Self::new(Namespace::LocalDocId, key)
    }

    /// Infers the namespace from the shape of a bare key: `Q<digits>` is a
    /// QID, `doc:<id>` a local document id, anything else an article title.
    pub fn infer(key: &str) -> Result<Self, DomainError> {
        let trimmed = key.trim();
        if QID_RE.is_match(trimmed) {
            Self::qid(trimmed)
        } else if let Some(id) = trimmed.strip_prefix("doc:") {
            Self::doc_id(id)
        } else {
            Self::title(trimmed)
        }
    }

    pub fn namespace(&self) -> Namespace {
        self.namespace
    }

    pub fn key(&self) -> &str {
        &self.key
    }

    fn canonical_key(&self) -> Cow<'_, str> {
        match self.namespace {
            Namespace::WikidataQid | Namespace::ArticleTitle => Cow::Borrowed(&self.key),
            Namespace::LocalDocId => Cow::Owned(normalize_title(&self.key)),
        }
    }
}

impl fmt::Display for EntityRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.namespace {
            Namespace::WikidataQid | Namespace::ArticleTitle => f.write_str(&self.key),
            Namespace::LocalDocId => write!(f, "doc:{}", self.key),
        }
    }
}

/// Entity identity: same namespace and same key under that namespace's rule.
pub fn entity_eq(a: &EntityRef, b: &EntityRef) -> bool {
    a.namespace == b.namespace && a.canonical_key() == b.canonical_key()
}

impl PartialEq for EntityRef {
    fn eq(&self, other: &Self) -> bool {
        entity_eq(self, other)
    }
}

impl Eq for EntityRef {}

impl Hash for EntityRef {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.namespace.hash(state);
        self.canonical_key().hash(state);
    }
}

impl PartialOrd for EntityRef {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for EntityRef {
    fn cmp(&self, other: &Self) -> Ordering {
        self.namespace
            .cmp(&other.namespace)
            .then_with(|| self.canonical_key().cmp(&other.canonical_key()))
    }
}

pub type EntitySet = BTreeSet<EntityRef>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawQuery")]
pub struct Query {
    pub id: String,
    pub text: String,
}

#[derive(Deserialize)]
struct RawQuery {
    id: String,
    text: String,
}

impl TryFrom<RawQuery> for Query {
    type Error = DomainError;

    fn try_from(raw: RawQuery) -> Result<Self, Self::Error> {
        Query::new(raw.id, raw.text)
    }
}

impl Query {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Result<Self, DomainError> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(DomainError::EmptyQuery);
        }
        Ok(Self { id: id.into(), text })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mention {
    pub surface: String,
    pub origin_query: String,
}

impl Mention {
    pub fn new(surface: impl Into<String>, origin_query: impl Into<String>) -> Result<Self, DomainError> {
        let surface = surface.into();
        if surface.trim().is_empty() {
            return Err(DomainError::EmptyMention);
        }
        if surface.contains(['\n', '\r']) {
            return Err(DomainError::MultilineMention(surface));
        }
        Ok(Self {
            surface,
            origin_query: origin_query.into(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub entity: EntityRef,
    pub title: String,
    pub description: String,
    pub rank: u32,
    pub score: f64,
}

/// Ranked search results for one mention.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateList {
    pub mention: Mention,
    pub candidates: Vec<Candidate>,
    pub k_requested: usize,
}

/// A search hit before ranks are assigned.
#[derive(Debug, Clone, PartialEq)]
pub struct Hit {
    pub entity: EntityRef,
    pub title: String,
    pub description: String,
    pub score: f64,
}

impl CandidateList {
    pub fn empty(mention: Mention, k_requested: usize) -> Self {
        Self {
            mention,
            candidates: Vec::new(),
            k_requested,
        }
    }

    /// Builds a list from hits already sorted best-first. Repeated entities
    /// keep their first occurrence; the result is cut to `k` and ranked 1..n.
    pub fn from_hits(mention: Mention, k: usize, hits: impl IntoIterator<Item = Hit>) -> Self {
        let mut seen = std::collections::HashSet::new();
        let candidates = hits
            .into_iter()
            .filter(|h| seen.insert(h.entity.clone()))
            .take(k)
            .enumerate()
            .map(|(i, h)| Candidate {
                entity: h.entity,
                title: h.title,
                description: h.description,
                rank: i as u32 + 1,
                score: h.score,
            })
            .collect();
        Self {
            mention,
            candidates,
            k_requested: k,
        }
    }

    pub fn validate(&self) -> Result<(), DomainError> {
        if self.candidates.len() > self.k_requested {
            return Err(DomainError::TooManyCandidates {
                len: self.candidates.len(),
                k: self.k_requested,
            });
        }
        let mut seen = std::collections::HashSet::new();
        for (i, c) in self.candidates.iter().enumerate() {
            if c.rank as usize != i + 1 {
                return Err(DomainError::RankGap {
                    position: i,
                    found: c.rank,
                });
            }
            if i > 0 && c.score > self.candidates[i - 1].score {
                return Err(DomainError::ScoreIncrease { rank: c.rank });
            }
            if !seen.insert(&c.entity) {
                return Err(DomainError::DuplicateCandidate(c.entity.clone()));
            }
        }
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn contains(&self, entity: &EntityRef) -> bool {
        self.candidates.iter().any(|c| &c.entity == entity)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldRecord {
    pub query: Query,
    pub gold_entities: EntitySet,
    #[serde(default)]
    pub answers: Vec<String>,
    #[serde(default)]
    pub gold_document: Option<EntityRef>,
}

impl GoldRecord {
    pub fn new(
        query: Query,
        gold_entities: impl IntoIterator<Item = EntityRef>,
        answers: Vec<String>,
        gold_document: Option<EntityRef>,
    ) -> Result<Self, DomainError> {
        let gold_entities: EntitySet = gold_entities.into_iter().collect();
        let mut namespaces = gold_entities.iter().map(EntityRef::namespace);
        if let Some(first) = namespaces.next() {
            if let Some(other) = namespaces.find(|ns| *ns != first) {
                return Err(DomainError::MixedNamespace(first, other));
            }
        }
        Ok(Self {
            query,
            gold_entities,
            answers,
            gold_document,
        })
    }
}

/// One mention and the entity chosen for it; `None` is the NIL link.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub mention: Mention,
    pub entity: Option<EntityRef>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkingResult {
    pub query: Query,
    pub selections: Vec<Selection>,
    pub predicted_set: EntitySet,
    pub think_retrieval: String,
    pub think_reader: String,
}

impl LinkingResult {
    pub fn new(
        query: Query,
        selections: Vec<Selection>,
        think_retrieval: String,
        think_reader: String,
    ) -> Self {
        let predicted_set = predicted_set(&selections);
        Self {
            query,
            selections,
            predicted_set,
            think_retrieval,
            think_reader,
        }
    }

    /// First linked entity in mention order.
    pub fn first_entity(&self) -> Option<&EntityRef> {
        self.selections.iter().find_map(|s| s.entity.as_ref())
    }
}

pub fn predicted_set(selections: &[Selection]) -> EntitySet {
    selections.iter().filter_map(|s| s.entity.clone()).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub title: String,
    pub first_paragraph: String,
    #[serde(rename = "text")]
    pub full_text: String,
}

impl Document {
    pub fn title_ref(&self) -> EntityRef {
        EntityRef::title(&self.title).unwrap_or_else(|_| {
            EntityRef::doc_id(&self.doc_id).expect("document has neither title nor id")
        })
    }
}

/// A full record of one agent run, the unit exported for fine-tuning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub query: Query,
    pub retrieval_output: String,
    pub candidate_lists: Vec<CandidateList>,
    pub reader_output: String,
    pub final_entities: EntitySet,
    pub matched_gold: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl Trajectory {
    pub fn failed(query: Query, error: impl ToString) -> Self {
        Self {
            query,
            retrieval_output: String::new(),
            candidate_lists: Vec::new(),
            reader_output: String::new(),
            final_entities: EntitySet::new(),
            matched_gold: false,
            error: Some(error.to_string()),
        }
    }

    /// Sets `matched_gold` from exact set equality with `gold`.
    pub fn score_against(&mut self, gold: &EntitySet) {
        self.matched_gold = self.error.is_none() && &self.final_entities == gold;
    }
}

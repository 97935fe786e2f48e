use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use once_cell::sync::Lazy;
use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{PipelineError, RawGoldRecord};
use crate::domain::{EntityRef, GoldRecord, Query};

static MID: Lazy<Regex> = Lazy::new(|| Regex::new(r"^m\.[0-9a-z_]+$").unwrap());
static QID: Lazy<Regex> = Lazy::new(|| Regex::new(r"^Q[0-9]+$").unwrap());
static SPARQL_SUBJECT: Lazy<Regex> = Lazy::new(|| Regex::new(r"^ns:(m\.[0-9a-z_]+)$").unwrap());
static STATEMENT_END: Lazy<Regex> = Lazy::new(|| Regex::new(r"\s\.(?:\s|$)").unwrap());

/// Accepts `m.0abc` and the dump spelling `/m/0abc`.
fn canonical_mid(raw: &str) -> Option<String> {
    let raw = raw.trim();
    let mid = match raw.strip_prefix("/m/") {
        Some(rest) => format!("m.{rest}"),
        None => raw.to_string(),
    };
    MID.is_match(&mid).then_some(mid)
}

/// MID to QID table.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FreebaseMapping {
    table: HashMap<String, String>,
}

impl FreebaseMapping {
    pub fn new(pairs: impl IntoIterator<Item = (String, String)>) -> Result<Self, PipelineError> {
        let mut table = HashMap::new();
        for (i, (mid, qid)) in pairs.into_iter().enumerate() {
            let line = i + 1;
            let mid = canonical_mid(&mid).ok_or_else(|| PipelineError::InvalidMapping {
                line,
                reason: format!("{mid:?} is not a MID"),
            })?;
            if !QID.is_match(qid.trim()) {
                return Err(PipelineError::InvalidMapping {
                    line,
                    reason: format!("{qid:?} is not a QID"),
                });
            }
            table.insert(mid, qid.trim().to_string());
        }
        Ok(Self { table })
    }

    /// Two tab-separated columns per line, MID then QID. Blank lines and
    /// lines starting with `#` are skipped.
    pub fn parse_tsv(text: &str) -> Result<Self, PipelineError> {
        let mut table = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |reason: String| PipelineError::InvalidMapping { line: line_no, reason };
            let mut cols = line.split('\t');
            let (Some(mid), Some(qid), None) = (cols.next(), cols.next(), cols.next()) else {
                return Err(bad("expected two tab-separated columns".into()));
            };
            let mid = canonical_mid(mid).ok_or_else(|| bad(format!("{mid:?} is not a MID")))?;
            let qid = qid.trim();
            if !QID.is_match(qid) {
                return Err(bad(format!("{qid:?} is not a QID")));
            }
            table.insert(mid, qid.to_string());
        }
        Ok(Self { table })
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(PipelineError::io(path))?;
        Self::parse_tsv(&text)
    }

    pub fn get(&self, mid: &str) -> Option<&str> {
        canonical_mid(mid).and_then(|m| self.table.get(&m)).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }
}

/// Records dropped by remapping and the keys that caused it.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnmappedReport {
    pub dropped_records: Vec<String>,
    /// Unmapped key and the number of records it appeared in.
    pub unmapped: BTreeMap<String, usize>,
    /// Records dropped for having no gold at all.
    pub no_gold: Vec<String>,
}

/// MIDs used as subject constants in the query's WHERE clause, in order of
/// first appearance. Triples are split on ` .` terminators and the first
/// term of each is checked for an `ns:m.` constant.
pub fn sparql_topic_mids(sparql: &str) -> Vec<String> {
    let Some(open) = sparql
        .to_ascii_uppercase()
        .find("WHERE")
        .and_then(|w| sparql[w..].find('{').map(|o| w + o))
    else {
        return Vec::new();
    };
    let body = &sparql[open + 1..];
    let body = &body[..body.rfind('}').unwrap_or(body.len())];
    let mut mids: Vec<String> = Vec::new();
    for statement in STATEMENT_END.split(body) {
        let statement = statement.trim_start_matches(|c: char| c.is_whitespace() || c == '{' || c == '}');
        let first = statement.split_whitespace().next().unwrap_or("");
        if let Some(c) = SPARQL_SUBJECT.captures(first) {
            if !mids.iter().any(|m| m == &c[1]) {
                mids.push(c[1].to_string());
            }
        }
    }
    mids
}

/// Replaces every MID gold with its QID. Golds come from `gold_entities`,
/// or from the SPARQL subject heuristic when that list is empty; keys that
/// already are QIDs pass through. A record with any unmapped key is dropped
/// and the key reported.
pub fn apply_freebase_mapping(
    records: Vec<RawGoldRecord>,
    mapping: &FreebaseMapping,
) -> (Vec<GoldRecord>, UnmappedReport) {
    let mut kept = Vec::new();
    let mut report = UnmappedReport::default();
    for rec in records {
        let keys = if rec.gold_entities.is_empty() {
            rec.sparql.as_deref().map(sparql_topic_mids).unwrap_or_default()
        } else {
            rec.gold_entities.clone()
        };
        if keys.is_empty() {
            report.no_gold.push(rec.id);
            continue;
        }
        let mut qids = Vec::with_capacity(keys.len());
        let mut missing = Vec::new();
        for key in &keys {
            let key = key.trim();
            match mapping.get(key) {
                Some(q) => qids.push(q.to_string()),
                None if QID.is_match(key) => qids.push(key.to_string()),
                None => missing.push(key.to_string()),
            }
        }
        if !missing.is_empty() {
            missing.sort();
            missing.dedup();
            for m in missing {
                *report.unmapped.entry(m).or_default() += 1;
            }
            report.dropped_records.push(rec.id);
            continue;
        }
        let gold = Query::new(rec.id.clone(), rec.question).and_then(|query| {
            let golds = qids.iter().map(EntityRef::qid).collect::<Result<Vec<_>, _>>()?;
            let doc = rec.gold_document.as_deref().map(EntityRef::infer).transpose()?;
            GoldRecord::new(query, golds, rec.answers, doc)
        });
        match gold {
            Ok(g) => kept.push(g),
            Err(e) => {
                log::warn!("record {}: {e}; dropped", rec.id);
                report.no_gold.push(rec.id);
            }
        }
    }
    (kept, report)
}

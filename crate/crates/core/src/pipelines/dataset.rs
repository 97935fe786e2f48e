use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::domain::{DomainError, EntityRef, GoldRecord, Query};

/// One dataset line before gold keys are interpreted.
///
/// `sparql` is only used by Freebase remapping, for records whose golds
/// must be read off the query.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawGoldRecord {
    pub id: String,
    pub question: String,
    #[serde(default)]
    pub gold_entities: Vec<String>,
    #[serde(default)]
    pub answers: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_document: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sparql: Option<String>,
}

impl RawGoldRecord {
    /// Dataset line for a record; title keys are written normalized.
    pub fn from_gold(record: &GoldRecord) -> Self {
        Self {
            id: record.query.id.clone(),
            question: record.query.text.clone(),
            gold_entities: record.gold_entities.iter().map(EntityRef::to_string).collect(),
            answers: record.answers.clone(),
            gold_document: record.gold_document.as_ref().map(EntityRef::to_string),
            sparql: None,
        }
    }

    /// Infers each key's namespace from its shape.
    pub fn into_gold(self) -> Result<GoldRecord, DomainError> {
        let query = Query::new(self.id, self.question)?;
        let golds = self
            .gold_entities
            .iter()
            .map(|k| EntityRef::infer(k))
            .collect::<Result<Vec<_>, _>>()?;
        let gold_document = self.gold_document.as_deref().map(EntityRef::infer).transpose()?;
        GoldRecord::new(query, golds, self.answers, gold_document)
    }
}

fn read_lines<T>(
    reader: impl Read,
    path: &Path,
    mut each: impl FnMut(usize, &str) -> Result<T, PipelineError>,
) -> Result<Vec<T>, PipelineError> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line.map_err(PipelineError::io(path))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(each(i + 1, &line)?);
    }
    Ok(out)
}

fn parse_raw(line_no: usize, line: &str, path: &Path) -> Result<RawGoldRecord, PipelineError> {
    serde_json::from_str(line).map_err(|e| PipelineError::Parse {
        path: path.to_path_buf(),
        line: line_no,
        reason: e.to_string(),
    })
}

pub fn load_raw_dataset(path: &Path) -> Result<Vec<RawGoldRecord>, PipelineError> {
    let file = File::open(path).map_err(PipelineError::io(path))?;
    read_lines(file, path, |n, line| parse_raw(n, line, path))
}

/// Parses dataset JSON lines from any reader; `path` only labels errors.
pub fn parse_dataset(reader: impl Read, path: &Path) -> Result<Vec<GoldRecord>, PipelineError> {
    read_lines(reader, path, |n, line| {
        parse_raw(n, line, path)?
            .into_gold()
            .map_err(|source| PipelineError::InvalidRecord {
                path: path.to_path_buf(),
                line: n,
                source,
            })
    })
}

/// Reads `{"id", "question", "gold_entities": [...], "answers"?, "gold_document"?}` lines.
pub fn load_dataset(path: &Path) -> Result<Vec<GoldRecord>, PipelineError> {
    let file = File::open(path).map_err(PipelineError::io(path))?;
    parse_dataset(file, path)
}

//! Per-query result lines and summary tables for evaluation runs.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::domain::{EntityRef, EntitySet, GoldRecord};
use crate::evaluation::{ElScores, ElSummary, EvalError, QaScores, QaSummary};
use crate::pipelines::QaResult;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "task", rename_all = "snake_case")]
pub enum Summary {
    El(ElSummary),
    Qa(QaSummary),
}

impl Summary {
    pub fn queries(&self) -> usize {
        match self {
            Summary::El(s) => s.queries,
            Summary::Qa(s) => s.queries,
        }
    }
}

/// Three percentages joined as `a / b / c`, two decimals each.
pub fn format_triple(a: f64, b: f64, c: f64) -> String {
    format!("{a:.2} / {b:.2} / {c:.2}")
}

/// Header, values and query count, one per line.
pub fn print_report(summary: &Summary) -> Result<String, EvalError> {
    if summary.queries() == 0 {
        return Err(EvalError::EmptyEvaluation);
    }
    let (header, values) = match summary {
        Summary::El(s) => ("Prec / Recall / Acc", format_triple(s.precision, s.recall, s.accuracy)),
        Summary::Qa(s) => ("Hit@1 / EM / F1", format_triple(s.hit_at_1, s.em, s.f1)),
    };
    Ok(format!("{header}\n{values}\nqueries: {}\n", summary.queries()))
}

/// Machine-readable summary; identical input gives identical bytes.
pub fn summary_json(summary: &Summary) -> Result<String, EvalError> {
    if summary.queries() == 0 {
        return Err(EvalError::EmptyEvaluation);
    }
    Ok(serde_json::to_string_pretty(summary).expect("summary serializes") + "\n")
}

fn keys(set: &EntitySet) -> Vec<String> {
    set.iter().map(EntityRef::to_string).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElRecord {
    pub id: String,
    pub predicted: Vec<String>,
    pub gold: Vec<String>,
    pub scores: ElScores,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl ElRecord {
    pub fn new(gold: &GoldRecord, predicted: &EntitySet, scores: ElScores, error: Option<String>) -> Self {
        Self {
            id: gold.query.id.clone(),
            predicted: keys(predicted),
            gold: keys(&gold.gold_entities),
            scores,
            error,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaRecord {
    pub id: String,
    pub predicted: Vec<String>,
    pub context_document: Option<String>,
    pub answer: String,
    pub gold_answers: Vec<String>,
    pub gold_document: Option<String>,
    pub scores: QaScores,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl QaRecord {
    pub fn new(gold: &GoldRecord, result: &QaResult, scores: QaScores) -> Self {
        Self {
            id: gold.query.id.clone(),
            predicted: keys(&result.linking.predicted_set),
            context_document: result.context_doc.as_ref().map(|d| d.title.clone()),
            answer: result.extracted_answer.clone(),
            gold_answers: gold.answers.clone(),
            gold_document: gold.gold_document.as_ref().map(EntityRef::to_string),
            scores,
            error: None,
        }
    }

    pub fn failed(gold: &GoldRecord, error: String) -> Self {
        Self {
            id: gold.query.id.clone(),
            predicted: Vec::new(),
            context_document: None,
            answer: String::new(),
            gold_answers: gold.answers.clone(),
            gold_document: gold.gold_document.as_ref().map(EntityRef::to_string),
            scores: QaScores { hit_at_1: 0.0, em: 0.0, f1: 0.0 },
            error: Some(error),
        }
    }
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> std::io::Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

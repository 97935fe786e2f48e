use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use ela_core::agent::{AgentConfig, EntityLinkingAgent};
use ela_core::domain::{self, Document, EntitySet, EntityRef, Mention, Query};
use ela_core::evaluation;
use ela_core::llm::ScriptedBackend;
use ela_core::retrieval::{self, Bm25Params};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn entity_set(keys: Vec<String>) -> PyResult<EntitySet> {
    keys.iter().map(|k| EntityRef::infer(k).map_err(value_err)).collect()
}

fn result_to_python<'py>(py: Python<'py>, value: &domain::LinkingResult) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(value_err)?;
    py.import("json")?.call_method1("loads", (text,))
}

/// Case-fold, collapse whitespace and map underscores to spaces.
#[pyfunction]
fn normalize_title(raw: &str) -> String {
    domain::normalize_title(raw)
}

#[pyfunction]
fn tokenize(text: &str) -> Vec<String> {
    retrieval::tokenize(text)
}

/// Precision, recall and exact-set accuracy of one prediction.
#[pyfunction]
fn el_metrics(predicted: Vec<String>, gold: Vec<String>) -> PyResult<(f64, f64, f64)> {
    let s = evaluation::el_metrics(&entity_set(predicted)?, &entity_set(gold)?);
    Ok((s.precision, s.recall, s.accuracy))
}

#[pyfunction]
fn normalize_answer(text: &str) -> String {
    evaluation::normalize_answer(text)
}

#[pyfunction]
fn exact_match(prediction: &str, golds: Vec<String>) -> f64 {
    evaluation::exact_match(prediction, &golds)
}

#[pyfunction]
fn token_f1(prediction: &str, golds: Vec<String>) -> f64 {
    evaluation::token_f1(prediction, &golds)
}

/// Mentions requested by `Search("...")` calls, deduplicated, in order.
#[pyfunction]
#[pyo3(signature = (completion, max_mentions = 8))]
fn parse_search_calls(completion: &str, max_mentions: usize) -> Vec<String> {
    ela_core::agent::parse_search_calls(completion, "py", max_mentions)
        .into_iter()
        .map(|m| m.surface)
        .collect()
}

/// BM25 index over document titles.
#[pyclass(frozen)]
struct TitleIndex {
    inner: retrieval::TitleIndex,
}

#[pymethods]
impl TitleIndex {
    /// Build from `(doc_id, title)` pairs.
    #[new]
    #[pyo3(signature = (docs, k1 = 1.2, b = 0.75))]
    fn new(docs: Vec<(String, String)>, k1: f64, b: f64) -> PyResult<Self> {
        let docs = docs.into_iter().map(|(doc_id, title)| Document {
            doc_id,
            title,
            first_paragraph: String::new(),
            full_text: String::new(),
        });
        let inner = retrieval::build_index(docs.collect::<Vec<_>>(), Bm25Params { k1, b }).map_err(value_err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(dir: PathBuf) -> PyResult<Self> {
        let inner = retrieval::TitleIndex::load(&dir).map_err(|e| PyIOError::new_err(e.to_string()))?;
        Ok(Self { inner })
    }

    fn save(&self, dir: PathBuf) -> PyResult<()> {
        self.inner.save(&dir).map_err(|e| PyIOError::new_err(e.to_string()))
    }

    /// Top `k` titles as `(title, score, rank)`.
    #[pyo3(signature = (mention, k = 50))]
    fn search(&self, mention: &str, k: usize) -> PyResult<Vec<(String, f64, u32)>> {
        let mention = Mention::new(mention, "py").map_err(value_err)?;
        Ok(self
            .inner
            .search(&mention, k)
            .candidates
            .into_iter()
            .map(|c| (c.title, c.score, c.rank))
            .collect())
    }

    fn __len__(&self) -> usize {
        self.inner.doc_count()
    }
}

/// Link one question with a scripted backend; returns the linking result
/// and LLM call count as a dict.
#[pyfunction]
#[pyo3(signature = (question, index, script, k = 50, max_mentions = 8))]
fn link<'py>(
    py: Python<'py>,
    question: &str,
    index: &TitleIndex,
    script: &str,
    k: usize,
    max_mentions: usize,
) -> PyResult<Bound<'py, PyAny>> {
    let backend = ScriptedBackend::from_json(script).map_err(value_err)?;
    let config = AgentConfig { k, max_mentions, ..AgentConfig::tool_use() };
    let query = Query::new("py", question).map_err(value_err)?;
    let outcome = EntityLinkingAgent::new(config)
        .link(&query, &index.inner, &backend)
        .map_err(value_err)?;
    let out = result_to_python(py, &outcome.result)?;
    out.set_item("llm_calls", outcome.llm_calls)?;
    Ok(out)
}

#[pymodule]
fn ela(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(normalize_title, m)?)?;
    m.add_function(wrap_pyfunction!(tokenize, m)?)?;
    m.add_function(wrap_pyfunction!(el_metrics, m)?)?;
    m.add_function(wrap_pyfunction!(normalize_answer, m)?)?;
    m.add_function(wrap_pyfunction!(exact_match, m)?)?;
    m.add_function(wrap_pyfunction!(token_f1, m)?)?;
    m.add_function(wrap_pyfunction!(parse_search_calls, m)?)?;
    m.add_function(wrap_pyfunction!(link, m)?)?;
    m.add_class::<TitleIndex>()?;
    Ok(())
}

use std::collections::HashMap;
use std::path::Path;

use once_cell::sync::Lazy;
use regex::Regex;
use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::agent::{parse_sections, render, EntityLinkingAgent, TemplateError};
use crate::domain::{entity_eq, Document, EntityRef, GoldRecord, LinkingResult, Namespace, Query};
use crate::evaluation::{exact_match, token_f1, QaScores};
use crate::llm::{complete, ChatBackend, ChatMessage};
use crate::retrieval::{CorpusStore, EntitySearcher};

const DEFAULT_ANSWER: &str = include_str!("../../templates/answer.txt");

static THINK_BLOCK: Lazy<Regex> = Lazy::new(|| Regex::new(r"(?s)<think>.*?</think>").unwrap());
static ANSWER_MARKER: Lazy<Regex> = Lazy::new(|| Regex::new(r"(?i)answer\s*:").unwrap());

/// Prompts for the answering model. `user` takes `{context}` and
/// `{question}`; `closed_book` takes `{question}` only.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerTemplate {
    pub system: String,
    pub user: String,
    pub closed_book: String,
}

impl AnswerTemplate {
    /// Sections `### system`, `### user` and `### closed book`.
    pub fn parse(text: &str) -> Result<Self, TemplateError> {
        let mut sections: HashMap<String, String> = HashMap::new();
        for (name, body) in parse_sections(text)? {
            match name.as_str() {
                "system" | "user" | "closed book" => {
                    sections.insert(name, body);
                }
                _ => return Err(TemplateError::UnknownSection(name)),
            }
        }
        let mut take = |name: &'static str| sections.remove(name).ok_or(TemplateError::MissingSection(name));
        Ok(Self {
            system: take("system")?,
            user: take("user")?,
            closed_book: take("closed book")?,
        })
    }

    pub fn load(path: &Path) -> Result<Self, TemplateError> {
        let text = std::fs::read_to_string(path).map_err(|source| TemplateError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn prompt(&self, question: &str, context: Option<&str>) -> Vec<ChatMessage> {
        let user = match context {
            Some(ctx) => render(&self.user, &HashMap::from([("context", ctx), ("question", question)])),
            None => render(&self.closed_book, &HashMap::from([("question", question)])),
        };
        vec![ChatMessage::system(&self.system), ChatMessage::user(user)]
    }
}

impl Default for AnswerTemplate {
    fn default() -> Self {
        Self::parse(DEFAULT_ANSWER).expect("bundled answer template is valid")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaResult {
    pub query: Query,
    pub linking: LinkingResult,
    pub context_doc: Option<Document>,
    pub raw_answer: String,
    pub extracted_answer: String,
    /// Set by [`QaResult::scored`] when golds are known.
    pub scores: Option<QaScores>,
    pub llm_calls: usize,
}

impl QaResult {
    pub fn scored(mut self, gold: &GoldRecord) -> Self {
        self.scores = Some(score_qa(&self, gold));
        self
    }
}

/// Text after the last `Answer:` marker outside `<think>` blocks, up to
/// the end of that line; the whole trimmed completion if there is none.
pub fn extract_answer(completion: &str) -> String {
    let visible = THINK_BLOCK.replace_all(completion, "");
    match ANSWER_MARKER.find_iter(&visible).last() {
        Some(m) => {
            let rest = visible[m.end()..].trim_start();
            rest.lines().next().unwrap_or("").trim().to_string()
        }
        None => visible.trim().to_string(),
    }
}

/// EM and F1 against `gold.answers`; Hit@1 compares the context document
/// with `gold.gold_document` in the gold's namespace.
pub fn score_qa(result: &QaResult, gold: &GoldRecord) -> QaScores {
    let hit = match (&result.context_doc, &gold.gold_document) {
        (Some(doc), Some(g)) => {
            let predicted = match g.namespace() {
                Namespace::LocalDocId => EntityRef::doc_id(&doc.doc_id).ok(),
                _ => Some(doc.title_ref()),
            };
            predicted.is_some_and(|p| entity_eq(&p, g))
        }
        _ => false,
    };
    QaScores {
        hit_at_1: if hit { 1.0 } else { 0.0 },
        em: exact_match(&result.extracted_answer, &gold.answers),
        f1: token_f1(&result.extracted_answer, &gold.answers),
    }
}

/// Links the question, reads the article of the first linked entity and
/// asks the answer model. Without a linked entity, or when its article is
/// missing from `store`, the question is answered closed-book.
pub fn answer_question(
    query: &Query,
    agent: &EntityLinkingAgent,
    searcher: &dyn EntitySearcher,
    store: &CorpusStore,
    backend: &dyn ChatBackend,
    template: &AnswerTemplate,
) -> Result<QaResult, PipelineError> {
    let outcome = agent.link(query, searcher, backend)?;
    let context_doc = match outcome.result.first_entity() {
        Some(entity) => match store.fetch_document(entity) {
            Ok(doc) => Some(doc.clone()),
            Err(e) => {
                log::warn!("query {}: {e}; answering closed-book", query.id);
                None
            }
        },
        None => None,
    };
    let prompt = template.prompt(&query.text, context_doc.as_ref().map(|d| d.full_text.as_str()));
    let raw_answer = complete(&prompt, &agent.sampling, backend).map_err(crate::agent::AgentError::from)?;
    Ok(QaResult {
        query: query.clone(),
        linking: outcome.result,
        context_doc,
        extracted_answer: extract_answer(&raw_answer),
        raw_answer,
        scores: None,
        llm_calls: outcome.llm_calls + 1,
    })
}

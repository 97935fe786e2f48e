//! The two-stage linking workflow.
//!
//! 1. Retrieval: the model reads the question and writes `Search(X)` calls,
//!    one per mention worth linking, all in one completion.
//! 2. Each mention is sent to the entity searcher for its top-`k` candidates.
//! 3. Reader: one completion sees the question and every candidate list,
//!    reasons inside `<think>`, and picks an index (or NONE) per mention.
//!
//! No mentions means no reader call. Search failures degrade that mention
//! to an empty list; unparseable reader output gets one re-prompt (when
//! enabled) and then degrades to all-NIL.

mod parse;
mod prompt;
mod template;

pub use parse::{extract_think, parse_reader_output, parse_search_calls, ReaderOutput, ReaderParseError, ANSWER_MARKER};
pub use prompt::{build_reader_prompt, build_retrieval_prompt, format_reminder, render_candidates, DESCRIPTION_CHAR_LIMIT};
pub use template::{parse_sections, render, PromptTemplate, Stage, TemplateError, NO_ENTITY_MARKER};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{CandidateList, LinkingResult, Query, Selection, Trajectory};
use crate::llm::{complete, ChatBackend, ChatMessage, LlmError, SamplingParams};
use crate::retrieval::EntitySearcher;

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("query {0:?} has no text")]
    InvalidQuery(String),
    #[error("template is for the {found:?} stage, expected {expected:?}")]
    WrongStage { expected: Stage, found: Stage },
    #[error(transparent)]
    Backend(#[from] LlmError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentConfig {
    /// Candidates requested per mention.
    pub k: usize,
    pub max_mentions: usize,
    pub reprompt_on_malformed: bool,
    pub fewshot_enabled: bool,
}

impl AgentConfig {
    /// Entity-linking evaluation against a search tool.
    pub fn tool_use() -> Self {
        Self {
            k: 50,
            max_mentions: 8,
            reprompt_on_malformed: true,
            fewshot_enabled: true,
        }
    }

    /// Linking as the retriever of a QA pipeline.
    pub fn qa() -> Self {
        Self {
            k: 35,
            ..Self::tool_use()
        }
    }
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self::tool_use()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinkOutcome {
    pub result: LinkingResult,
    /// `matched_gold` is left false; callers holding gold score it.
    pub trajectory: Trajectory,
    pub llm_calls: usize,
}

#[derive(Debug, Clone)]
pub struct EntityLinkingAgent {
    pub retrieval_template: PromptTemplate,
    pub reader_template: PromptTemplate,
    pub config: AgentConfig,
    pub sampling: SamplingParams,
}

impl EntityLinkingAgent {
    pub fn new(config: AgentConfig) -> Self {
        Self {
            retrieval_template: PromptTemplate::default_retrieval(),
            reader_template: PromptTemplate::default_reader(),
            config,
            sampling: SamplingParams::default(),
        }
    }

    pub fn with_templates(mut self, retrieval: PromptTemplate, reader: PromptTemplate) -> Self {
        self.retrieval_template = retrieval;
        self.reader_template = reader;
        self
    }

    pub fn retrieval_prompt(&self, query: &Query, fewshot: bool) -> Result<Vec<ChatMessage>, AgentError> {
        build_retrieval_prompt(query, &self.retrieval_template, fewshot)
    }

    pub fn reader_prompt(
        &self,
        query: &Query,
        lists: &[CandidateList],
        fewshot: bool,
    ) -> Result<Vec<ChatMessage>, AgentError> {
        build_reader_prompt(query, lists, &self.reader_template, fewshot)
    }

    pub fn link(
        &self,
        query: &Query,
        searcher: &dyn EntitySearcher,
        backend: &dyn ChatBackend,
    ) -> Result<LinkOutcome, AgentError> {
        let fewshot = self.config.fewshot_enabled;
        let mut llm_calls = 0;

        let prompt = self.retrieval_prompt(query, fewshot)?;
        let retrieval_output = complete(&prompt, &self.sampling, backend)?;
        llm_calls += 1;
        let mentions = parse_search_calls(&retrieval_output, &query.id, self.config.max_mentions);
        let think_retrieval = retrieval_reasoning(&retrieval_output);

        if mentions.is_empty() {
            let result = LinkingResult::new(query.clone(), Vec::new(), think_retrieval, String::new());
            return Ok(self.outcome(result, retrieval_output, Vec::new(), String::new(), llm_calls));
        }

        let lists: Vec<CandidateList> = mentions
            .into_iter()
            .map(|m| match searcher.search(&m, self.config.k) {
                Ok(list) => list,
                Err(e) => {
                    log::warn!("query {}: search for {:?} failed: {e}", query.id, m.surface);
                    CandidateList::empty(m, self.config.k)
                }
            })
            .collect();

        let mut prompt = self.reader_prompt(query, &lists, fewshot)?;
        let mut reader_output = complete(&prompt, &self.sampling, backend)?;
        llm_calls += 1;
        let mut parsed = parse_reader_output(&reader_output, &lists);
        if let Err(e) = &parsed {
            if self.config.reprompt_on_malformed {
                log::info!("query {}: re-prompting reader ({e})", query.id);
                prompt.push(ChatMessage::assistant(reader_output.clone()));
                prompt.push(ChatMessage::user(format_reminder(query)));
                reader_output = complete(&prompt, &self.sampling, backend)?;
                llm_calls += 1;
                parsed = parse_reader_output(&reader_output, &lists);
            }
        }
        let (selections, think_reader) = match parsed {
            Ok(out) => (out.selections, out.think),
            Err(e) => {
                log::warn!("query {}: reader output unusable ({e}); linking nothing", query.id);
                let nil = lists
                    .iter()
                    .map(|l| Selection {
                        mention: l.mention.clone(),
                        entity: None,
                    })
                    .collect();
                (nil, extract_think(&reader_output))
            }
        };

        let result = LinkingResult::new(query.clone(), selections, think_retrieval, think_reader);
        Ok(self.outcome(result, retrieval_output, lists, reader_output, llm_calls))
    }

    fn outcome(
        &self,
        result: LinkingResult,
        retrieval_output: String,
        candidate_lists: Vec<CandidateList>,
        reader_output: String,
        llm_calls: usize,
    ) -> LinkOutcome {
        let trajectory = Trajectory {
            query: result.query.clone(),
            retrieval_output,
            candidate_lists,
            reader_output,
            final_entities: result.predicted_set.clone(),
            matched_gold: false,
            error: None,
        };
        LinkOutcome {
            result,
            trajectory,
            llm_calls,
        }
    }
}

/// Reasoning text of the retrieval completion: its `<think>` blocks if
/// present, otherwise the completion with the search calls removed.
fn retrieval_reasoning(output: &str) -> String {
    let think = extract_think(output);
    if !think.is_empty() {
        return think;
    }
    parse::search_call_regex()
        .replace_all(output, "")
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .collect::<Vec<_>>()
        .join("\n")
}

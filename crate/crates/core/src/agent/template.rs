//! Plain-text prompt templates.
//!
//! A template file is a sequence of sections, each opened by a header line
//! `### <name>`. Prompt templates use `system`, any number of
//! `example input` / `example output` pairs, and `user`. Bodies may contain
//! `{name}` placeholders that are filled at render time.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::parse::{search_call_regex, ANSWER_MARKER};

pub const NO_ENTITY_MARKER: &str = "No entities to search";

const DEFAULT_RETRIEVAL: &str = include_str!("../../templates/retrieval.txt");
const DEFAULT_READER: &str = include_str!("../../templates/reader.txt");

#[derive(Debug, Error)]
pub enum TemplateError {
    #[error("template has no `### {0}` section")]
    MissingSection(&'static str),
    #[error("text before the first `### ` header")]
    Preamble,
    #[error("example {0}: every `example input` needs a following `example output`")]
    UnpairedExample(usize),
    #[error("example {index}: {reason}")]
    InvalidExample { index: usize, reason: String },
    #[error("unknown section `### {0}`")]
    UnknownSection(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Splits a template file into `(section name, body)` pairs, in order.
pub fn parse_sections(text: &str) -> Result<Vec<(String, String)>, TemplateError> {
    let mut sections: Vec<(String, Vec<&str>)> = Vec::new();
    for line in text.lines() {
        if let Some(name) = line.strip_prefix("### ") {
            sections.push((name.trim().to_lowercase(), Vec::new()));
        } else if let Some((_, body)) = sections.last_mut() {
            body.push(line);
        } else if !line.trim().is_empty() {
            return Err(TemplateError::Preamble);
        }
    }
    Ok(sections
        .into_iter()
        .map(|(name, lines)| (name, lines.join("\n").trim_matches('\n').to_string()))
        .collect())
}

/// Fills `{name}` placeholders in one pass; unknown names are left as is,
/// and substituted text is never rescanned.
pub fn render(template: &str, values: &HashMap<&str, &str>) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        match after.find('}') {
            Some(close) if values.contains_key(&after[..close]) => {
                out.push_str(values[&after[..close]]);
                rest = &after[close + 1..];
            }
            _ => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Retrieval,
    Reader,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub stage: Stage,
    pub system_instruction: String,
    pub fewshot_examples: Vec<(String, String)>,
    /// Final user message; `{question}` and, for the reader, `{candidates}`.
    pub user_template: String,
}

impl PromptTemplate {
    pub fn parse(text: &str, stage: Stage) -> Result<Self, TemplateError> {
        let mut system = None;
        let mut user = None;
        let mut examples = Vec::new();
        let mut pending_input: Option<String> = None;
        for (name, body) in parse_sections(text)? {
            match name.as_str() {
                "system" => system = Some(body),
                "user" => user = Some(body),
                "example input" => {
                    if pending_input.is_some() {
                        return Err(TemplateError::UnpairedExample(examples.len() + 1));
                    }
                    pending_input = Some(body);
                }
                "example output" => match pending_input.take() {
                    Some(input) => examples.push((input, body)),
                    None => return Err(TemplateError::UnpairedExample(examples.len() + 1)),
                },
                _ => return Err(TemplateError::UnknownSection(name)),
            }
        }
        if pending_input.is_some() {
            return Err(TemplateError::UnpairedExample(examples.len() + 1));
        }
        let template = Self {
            stage,
            system_instruction: system.ok_or(TemplateError::MissingSection("system"))?,
            fewshot_examples: examples,
            user_template: user.ok_or(TemplateError::MissingSection("user"))?,
        };
        template.validate()?;
        Ok(template)
    }

    pub fn load(path: &Path, stage: Stage) -> Result<Self, TemplateError> {
        let text = std::fs::read_to_string(path).map_err(|source| TemplateError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text, stage)
    }

    pub fn default_retrieval() -> Self {
        Self::parse(DEFAULT_RETRIEVAL, Stage::Retrieval).expect("bundled retrieval template is valid")
    }

    pub fn default_reader() -> Self {
        Self::parse(DEFAULT_READER, Stage::Reader).expect("bundled reader template is valid")
    }

    /// Retrieval examples must show a search call or the no-entity marker;
    /// reader examples must show a think block followed by an answer block.
    pub fn validate(&self) -> Result<(), TemplateError> {
        for (i, (_, output)) in self.fewshot_examples.iter().enumerate() {
            let index = i + 1;
            match self.stage {
                Stage::Retrieval => {
                    if !search_call_regex().is_match(output) && !output.contains(NO_ENTITY_MARKER) {
                        return Err(TemplateError::InvalidExample {
                            index,
                            reason: format!("output has neither a Search(...) call nor {NO_ENTITY_MARKER:?}"),
                        });
                    }
                }
                Stage::Reader => {
                    let close = output.find("</think>");
                    let ok = output.contains("<think>")
                        && close.is_some_and(|c| output[c..].contains(ANSWER_MARKER));
                    if !ok {
                        return Err(TemplateError::InvalidExample {
                            index,
                            reason: format!("output needs <think>...</think> followed by {ANSWER_MARKER:?}"),
                        });
                    }
                }
            }
        }
        Ok(())
    }
}

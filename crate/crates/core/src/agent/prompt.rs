use std::collections::HashMap;
use std::fmt::Write;

use super::template::{render, PromptTemplate, Stage};
use super::AgentError;
use crate::domain::{CandidateList, Query};
use crate::llm::ChatMessage;

/// Candidate descriptions are cut to this many characters in reader prompts.
pub const DESCRIPTION_CHAR_LIMIT: usize = 300;

fn check_stage(template: &PromptTemplate, expected: Stage) -> Result<(), AgentError> {
    if template.stage != expected {
        return Err(AgentError::WrongStage {
            expected,
            found: template.stage,
        });
    }
    Ok(())
}

fn assemble(template: &PromptTemplate, fewshot: bool, user: String) -> Vec<ChatMessage> {
    let mut messages = vec![ChatMessage::system(&template.system_instruction)];
    if fewshot {
        for (input, output) in &template.fewshot_examples {
            messages.push(ChatMessage::user(input));
            messages.push(ChatMessage::assistant(output));
        }
    }
    messages.push(ChatMessage::user(user));
    messages
}

/// System instruction, optional few-shot turns, then the question.
pub fn build_retrieval_prompt(
    query: &Query,
    template: &PromptTemplate,
    fewshot: bool,
) -> Result<Vec<ChatMessage>, AgentError> {
    check_stage(template, Stage::Retrieval)?;
    if query.text.trim().is_empty() {
        return Err(AgentError::InvalidQuery(query.id.clone()));
    }
    let user = render(&template.user_template, &HashMap::from([("question", query.text.as_str())]));
    Ok(assemble(template, fewshot, user))
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn truncate_chars(s: &str, limit: usize) -> &str {
    match s.char_indices().nth(limit) {
        Some((i, _)) => s[..i].trim_end(),
        None => s,
    }
}

/// Renders the numbered candidate blocks, one per mention:
///
/// ```text
/// Mention 1: The Girl In White
/// [1] The girl in white: 1952 American film by John Sturges
/// [2] ...
/// ```
pub fn render_candidates(lists: &[CandidateList]) -> String {
    let mut out = String::new();
    for (i, list) in lists.iter().enumerate() {
        if i > 0 {
            out.push_str("\n\n");
        }
        let _ = write!(out, "Mention {}: {}", i + 1, list.mention.surface);
        if list.is_empty() {
            out.push_str("\n(no results)");
        }
        for (j, c) in list.candidates.iter().enumerate() {
            let description = one_line(&c.description);
            let description = truncate_chars(&description, DESCRIPTION_CHAR_LIMIT);
            let _ = write!(out, "\n[{}] {}", j + 1, one_line(&c.title));
            if !description.is_empty() {
                let _ = write!(out, ": {description}");
            }
        }
    }
    out
}

pub fn build_reader_prompt(
    query: &Query,
    lists: &[CandidateList],
    template: &PromptTemplate,
    fewshot: bool,
) -> Result<Vec<ChatMessage>, AgentError> {
    check_stage(template, Stage::Reader)?;
    let candidates = render_candidates(lists);
    let user = render(
        &template.user_template,
        &HashMap::from([("question", query.text.as_str()), ("candidates", candidates.as_str())]),
    );
    Ok(assemble(template, fewshot, user))
}

pub fn format_reminder(query: &Query) -> String {
    format!(
        "Your previous reply could not be parsed. Reply again for the question \"{}\": \
         reason inside <think></think>, then write \"Answers:\" and one line per mention \
         in the form `mention -> index` or `mention -> NONE`, using only listed indices.",
        one_line(&query.text)
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{EntityRef, Hit, Mention};
    use crate::llm::Role;

    fn query() -> Query {
        Query::new(
            "q1",
            "Which film has the director born first, Once A Gentleman or The Girl In White?",
        )
        .unwrap()
    }

    fn two_shot_retrieval() -> PromptTemplate {
        let mut t = PromptTemplate::default_retrieval();
        t.fewshot_examples.truncate(2);
        t
    }

    #[test]
    fn retrieval_prompt_shapes() {
        let t = two_shot_retrieval();
        let msgs = build_retrieval_prompt(&query(), &t, true).unwrap();
        let roles: Vec<Role> = msgs.iter().map(|m| m.role).collect();
        use Role::*;
        assert_eq!(roles, [System, User, Assistant, User, Assistant, User]);
        assert_eq!(msgs[5].content, query().text);
        assert!(msgs[0].content.contains("Only search for entities that are explicitly named"));
        assert_eq!(build_retrieval_prompt(&query(), &t, false).unwrap().len(), 2);
    }

    #[test]
    fn retrieval_prompt_guards() {
        let empty = Query {
            id: "q0".into(),
            text: "   ".into(),
        };
        let t = two_shot_retrieval();
        assert!(matches!(build_retrieval_prompt(&empty, &t, true), Err(AgentError::InvalidQuery(_))));
        let reader = PromptTemplate::default_reader();
        assert!(matches!(build_retrieval_prompt(&query(), &reader, true), Err(AgentError::WrongStage { .. })));
    }

    fn list(mention: &str, cands: &[(&str, &str)]) -> CandidateList {
        let hits = cands.iter().enumerate().map(|(i, (t, d))| Hit {
            entity: EntityRef::title(*t).unwrap(),
            title: t.to_string(),
            description: d.to_string(),
            score: 5.0 - i as f64,
        });
        CandidateList::from_hits(Mention::new(mention, "q1").unwrap(), 35, hits)
    }

    #[test]
    fn reader_prompt_renders_candidates() {
        let lists = vec![list(
            "The Girl In White",
            &[("The girl in white", "1952 American film by John Sturges")],
        )];
        let msgs = build_reader_prompt(&query(), &lists, &PromptTemplate::default_reader(), true).unwrap();
        let last = &msgs.last().unwrap().content;
        assert!(last.starts_with("Question: Which film"));
        assert!(last.contains("\n[1] The girl in white: 1952 American film by John Sturges"));
        assert_eq!(msgs.len(), 2 + 2 * 3);
    }

    #[test]
    fn reader_prompt_empty_list_and_numbering() {
        let lists = vec![list("Zorblax", &[])];
        assert!(render_candidates(&lists).contains("Mention 1: Zorblax\n(no results)"));

        let lists = vec![list("a", &[("A1", "x"), ("A2", "y")]), list("b", &[("B1", ""), ("B2", "z")])];
        let text = render_candidates(&lists);
        assert_eq!(
            text,
            "Mention 1: a\n[1] A1: x\n[2] A2: y\n\nMention 2: b\n[1] B1\n[2] B2: z"
        );
    }

    #[test]
    fn descriptions_are_truncated_and_flattened() {
        let long = format!("line one\nline two {}", "é".repeat(400));
        let lists = vec![list("a", &[("A", &long)])];
        let text = render_candidates(&lists);
        let line = text.lines().nth(1).unwrap();
        let description = line.strip_prefix("[1] A: ").unwrap();
        assert_eq!(description.chars().count(), DESCRIPTION_CHAR_LIMIT);
        assert!(description.starts_with("line one line two"));
    }
}

//! Parsers for the two completions the agent reads back: the retrieval
//! stage's `Search(X)` calls and the reader's `<think>` + answer block.

use std::collections::HashSet;

use once_cell::sync::Lazy;
use regex::Regex;
use thiserror::Error;

use crate::domain::{case_fold, CandidateList, Mention, Selection};

pub const ANSWER_MARKER: &str = "Answers:";

// Arguments may not contain ')' or a newline; mentions with parentheses
// are not supported.
static SEARCH_CALL: Lazy<Regex> = Lazy::new(|| Regex::new(r"Search\(([^)\n]*)\)").unwrap());
static THINK_BLOCK: Lazy<Regex> = Lazy::new(|| Regex::new(r"(?s)<think>(.*?)</think>").unwrap());
static ANSWER_HEADER: Lazy<Regex> = Lazy::new(|| Regex::new(r"(?im)^[ \t*#]*answers?[ \t*]*:").unwrap());
static ANSWER_LINE: Lazy<Regex> = Lazy::new(|| Regex::new(r"^\s*(?:[-*]\s+)?(.+?)\s*->\s*(.+?)\s*$").unwrap());

pub(crate) fn search_call_regex() -> &'static Regex {
    &SEARCH_CALL
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ReaderParseError {
    #[error("reader output has no `Answers:` block")]
    MissingAnswerBlock,
    #[error("mention {mention:?}: index {index} is outside 1..={len}")]
    IndexOutOfRange { mention: String, index: usize, len: usize },
    #[error("mention {mention:?}: {value:?} is neither an index nor NONE")]
    BadSelection { mention: String, value: String },
}

fn strip_quotes(s: &str) -> &str {
    let s = s.trim();
    for (open, close) in [('"', '"'), ('\'', '\''), ('“', '”'), ('‘', '’'), ('`', '`')] {
        if s.len() >= open.len_utf8() + close.len_utf8() && s.starts_with(open) && s.ends_with(close) {
            return s[open.len_utf8()..s.len() - close.len_utf8()].trim();
        }
    }
    s
}

fn mention_key(s: &str) -> String {
    case_fold(s).split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Extracts `Search(X)` arguments in textual order. Quotes and whitespace
/// around `X` are trimmed, empty arguments dropped, repeats removed
/// case-insensitively (first spelling wins) and the list capped at
/// `max_mentions`.
pub fn parse_search_calls(completion: &str, query_id: &str, max_mentions: usize) -> Vec<Mention> {
    let mut seen = HashSet::new();
    SEARCH_CALL
        .captures_iter(completion)
        .map(|c| strip_quotes(c.get(1).map_or("", |m| m.as_str())))
        .filter(|s| !s.is_empty())
        .filter(|s| seen.insert(mention_key(s)))
        .filter_map(|s| Mention::new(s, query_id).ok())
        .take(max_mentions)
        .collect()
}

/// Text inside every `<think>...</think>` block, joined by newlines.
pub fn extract_think(completion: &str) -> String {
    THINK_BLOCK
        .captures_iter(completion)
        .map(|c| c[1].trim().to_string())
        .collect::<Vec<_>>()
        .join("\n")
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReaderOutput {
    pub selections: Vec<Selection>,
    pub think: String,
}

/// Resolves `mention -> index|NONE` lines against the candidate lists.
///
/// Only entities that appear in the matching list can be returned; lines
/// naming unknown mentions are ignored, and mentions without a line map to
/// NIL. When a mention is answered twice the first line counts.
pub fn parse_reader_output(completion: &str, lists: &[CandidateList]) -> Result<ReaderOutput, ReaderParseError> {
    let think = extract_think(completion);
    let visible = THINK_BLOCK.replace_all(completion, "");
    let header = ANSWER_HEADER
        .find_iter(&visible)
        .last()
        .ok_or(ReaderParseError::MissingAnswerBlock)?;
    let block = &visible[header.end()..];

    let keys: Vec<String> = lists.iter().map(|l| mention_key(&l.mention.surface)).collect();
    let mut picked: Vec<Option<Option<usize>>> = vec![None; lists.len()];
    for line in block.lines() {
        let Some(caps) = ANSWER_LINE.captures(line) else {
            continue;
        };
        let name = mention_key(strip_quotes(&caps[1]));
        let Some(slot) = keys.iter().position(|k| *k == name) else {
            log::debug!("reader answered unknown mention {:?}", &caps[1]);
            continue;
        };
        if picked[slot].is_some() {
            continue;
        }
        let raw = caps[2].trim_matches(|c: char| matches!(c, '[' | ']' | '.' | '"' | '\'' | '`'));
        let list = &lists[slot];
        let choice = if raw.eq_ignore_ascii_case("none") || raw.eq_ignore_ascii_case("nil") {
            None
        } else {
            let index: usize = raw.parse().map_err(|_| ReaderParseError::BadSelection {
                mention: list.mention.surface.clone(),
                value: caps[2].to_string(),
            })?;
            if index == 0 || index > list.len() {
                return Err(ReaderParseError::IndexOutOfRange {
                    mention: list.mention.surface.clone(),
                    index,
                    len: list.len(),
                });
            }
            Some(index - 1)
        };
        picked[slot] = Some(choice);
    }

    let selections = lists
        .iter()
        .zip(picked)
        .map(|(list, choice)| Selection {
            mention: list.mention.clone(),
            entity: choice.flatten().map(|i| list.candidates[i].entity.clone()),
        })
        .collect();
    Ok(ReaderOutput { selections, think })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{EntityRef, Hit};
    use proptest::prelude::*;

    fn surfaces(ms: &[Mention]) -> Vec<&str> {
        ms.iter().map(|m| m.surface.as_str()).collect()
    }

    #[test]
    fn search_call_examples() {
        let out = r#"I should look them up. Search("Once A Gentleman") Search("The Girl In White")"#;
        assert_eq!(surfaces(&parse_search_calls(out, "q", 8)), ["Once A Gentleman", "The Girl In White"]);
        assert!(parse_search_calls("There are no named entities here.", "q", 8).is_empty());
        assert_eq!(surfaces(&parse_search_calls(r#"Search("NBA") Search("nba")"#, "q", 8)), ["NBA"]);
    }

    #[test]
    fn search_call_variants() {
        let out = "Search(NBA)\nSearch( 'Chicago Bulls' )\nSearch(\"\")\nSearch(“Paris”)\nsearch(\"lower\")";
        assert_eq!(surfaces(&parse_search_calls(out, "q", 8)), ["NBA", "Chicago Bulls", "Paris"]);
        let many: String = (0..12).map(|i| format!("Search(\"m{i}\") ")).collect();
        assert_eq!(parse_search_calls(&many, "q", 8).len(), 8);
        assert_eq!(parse_search_calls("Search(\"x\")", "q7", 8)[0].origin_query, "q7");
    }

    fn list(mention: &str, titles: &[&str]) -> CandidateList {
        let hits = titles.iter().enumerate().map(|(i, t)| Hit {
            entity: EntityRef::title(*t).unwrap(),
            title: t.to_string(),
            description: String::new(),
            score: 10.0 - i as f64,
        });
        CandidateList::from_hits(Mention::new(mention, "q").unwrap(), 10, hits)
    }

    fn films() -> Vec<CandidateList> {
        vec![
            list("Once A Gentleman", &["A Gentleman", "Once a Gentleman"]),
            list("The Girl In White", &["The girl in white", "The Girl in White (painting)"]),
        ]
    }

    #[test]
    fn reader_resolves_indices() {
        let out = "<think>the query concerns two films</think>\nAnswers:\nOnce A Gentleman -> 2\nThe Girl In White -> 1";
        let parsed = parse_reader_output(out, &films()).unwrap();
        assert_eq!(parsed.think, "the query concerns two films");
        assert_eq!(parsed.selections[0].entity, Some(EntityRef::title("Once a Gentleman").unwrap()));
        assert_eq!(parsed.selections[1].entity, Some(EntityRef::title("The girl in white").unwrap()));
    }

    #[test]
    fn reader_none_and_missing_lines() {
        let out = "<think>x</think>\nAnswers:\nOnce A Gentleman -> NONE";
        let parsed = parse_reader_output(out, &films()).unwrap();
        assert_eq!(parsed.selections[0].entity, None);
        assert_eq!(parsed.selections[1].entity, None);
    }

    #[test]
    fn reader_guards() {
        assert_eq!(
            parse_reader_output("<think>x</think> I pick 1.", &films()),
            Err(ReaderParseError::MissingAnswerBlock)
        );
        // An answer block inside <think> does not count.
        assert_eq!(
            parse_reader_output("<think>Answers:\nOnce A Gentleman -> 1</think>", &films()),
            Err(ReaderParseError::MissingAnswerBlock)
        );
        assert!(matches!(
            parse_reader_output("Answers:\nOnce A Gentleman -> 3", &films()),
            Err(ReaderParseError::IndexOutOfRange { index: 3, len: 2, .. })
        ));
        assert!(matches!(
            parse_reader_output("Answers:\nOnce A Gentleman -> second", &films()),
            Err(ReaderParseError::BadSelection { .. })
        ));
    }

    #[test]
    fn reader_tolerates_formatting_noise() {
        let out = "<think>a</think>\n<think>b</think>\n**Answers:**\n- \"once a  gentleman\" -> [2]\nUnknown -> 1\nThe Girl In White -> 2.";
        let parsed = parse_reader_output(out, &films()).unwrap();
        assert_eq!(parsed.think, "a\nb");
        assert_eq!(parsed.selections[0].entity, Some(EntityRef::title("Once a Gentleman").unwrap()));
        assert_eq!(parsed.selections[1].entity, Some(EntityRef::title("The Girl in White (painting)").unwrap()));
    }

    proptest! {
        #[test]
        fn render_then_parse_recovers_mentions(
            mentions in prop::collection::vec("[A-Za-z0-9][A-Za-z0-9 .,'&(\"-]{0,18}[A-Za-z0-9.]", 0..10),
            filler in "[a-z ,.]{0,12}",
        ) {
            let rendered: Vec<String> = mentions.iter().map(|m| format!("Search(\"{m}\")")).collect();
            let text = rendered.join(&format!(" {filler}\n"));
            let mut seen = HashSet::new();
            let expected: Vec<&str> = mentions
                .iter()
                .map(String::as_str)
                .filter(|m| seen.insert(m.to_lowercase().split_whitespace().collect::<Vec<_>>().join(" ")))
                .take(8)
                .collect();
            let parsed = parse_search_calls(&text, "q", 8);
            prop_assert_eq!(surfaces(&parsed), expected);
        }
    }
}

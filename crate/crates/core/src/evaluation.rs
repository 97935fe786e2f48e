//! Entity-linking set metrics and extractive-QA answer metrics.
//!
//! The EL "accuracy" is the per-query exact-set-match indicator. It is
//! sometimes called micro F1 in the literature; the value here is the
//! literal indicator, macro-averaged over queries.

use std::collections::HashMap;

use once_cell::sync::Lazy;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{entity_eq, EntityRef, EntitySet};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("nothing to evaluate: no queries were scored")]
    EmptyEvaluation,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ElScores {
    pub precision: f64,
    pub recall: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QaScores {
    pub hit_at_1: f64,
    pub em: f64,
    pub f1: f64,
}

/// Precision, recall and exact-set accuracy of `predicted` against `gold`.
///
/// Empty sets: an empty prediction has precision 0 against a non-empty
/// gold, a non-empty prediction has recall 0 against an empty gold, and
/// two empty sets score 1 across the board.
pub fn el_metrics(predicted: &EntitySet, gold: &EntitySet) -> ElScores {
    let overlap = predicted.intersection(gold).count() as f64;
    let exact = predicted == gold;
    let precision = match (predicted.len(), gold.len()) {
        (0, 0) => 1.0,
        (0, _) => 0.0,
        (p, _) => overlap / p as f64,
    };
    let recall = match (predicted.len(), gold.len()) {
        (0, 0) => 1.0,
        (_, 0) => 0.0,
        (_, g) => overlap / g as f64,
    };
    ElScores {
        precision,
        recall,
        accuracy: if exact { 1.0 } else { 0.0 },
    }
}

/// Macro means of per-query scores, as percentages.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ElSummary {
    pub precision: f64,
    pub recall: f64,
    pub accuracy: f64,
    pub queries: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QaSummary {
    pub hit_at_1: f64,
    pub em: f64,
    pub f1: f64,
    pub queries: usize,
}

/// Rounds a fraction to a percentage with two decimals.
pub fn percent(fraction: f64) -> f64 {
    (fraction * 10_000.0).round() / 100.0
}

fn mean(values: impl Iterator<Item = f64>, n: usize) -> f64 {
    values.sum::<f64>() / n as f64
}

pub fn aggregate_el(per_query: &[ElScores]) -> Result<ElSummary, EvalError> {
    let n = per_query.len();
    if n == 0 {
        return Err(EvalError::EmptyEvaluation);
    }
    Ok(ElSummary {
        precision: percent(mean(per_query.iter().map(|s| s.precision), n)),
        recall: percent(mean(per_query.iter().map(|s| s.recall), n)),
        accuracy: percent(mean(per_query.iter().map(|s| s.accuracy), n)),
        queries: n,
    })
}

pub fn aggregate_qa(per_query: &[QaScores]) -> Result<QaSummary, EvalError> {
    let n = per_query.len();
    if n == 0 {
        return Err(EvalError::EmptyEvaluation);
    }
    Ok(QaSummary {
        hit_at_1: percent(mean(per_query.iter().map(|s| s.hit_at_1), n)),
        em: percent(mean(per_query.iter().map(|s| s.em), n)),
        f1: percent(mean(per_query.iter().map(|s| s.f1), n)),
        queries: n,
    })
}

static ARTICLES: Lazy<Regex> = Lazy::new(|| Regex::new(r"\b(a|an|the)\b").unwrap());

/// Lowercase, strip punctuation, drop English articles, collapse whitespace.
pub fn normalize_answer(text: &str) -> String {
    let lower = text.to_lowercase();
    let no_punct: String = lower.chars().filter(|c| !c.is_ascii_punctuation()).collect();
    let no_articles = ARTICLES.replace_all(&no_punct, " ");
    no_articles.split_whitespace().collect::<Vec<_>>().join(" ")
}

pub fn exact_match(prediction: &str, golds: &[String]) -> f64 {
    let pred = normalize_answer(prediction);
    if golds.iter().any(|g| normalize_answer(g) == pred) {
        1.0
    } else {
        0.0
    }
}

fn f1_single(prediction: &str, gold: &str) -> f64 {
    let pred = normalize_answer(prediction);
    let gold = normalize_answer(gold);
    let pred_tokens: Vec<&str> = pred.split_whitespace().collect();
    let gold_tokens: Vec<&str> = gold.split_whitespace().collect();
    if pred_tokens.is_empty() && gold_tokens.is_empty() {
        return 1.0;
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in &gold_tokens {
        *counts.entry(t).or_default() += 1;
    }
    let mut overlap = 0usize;
    for t in &pred_tokens {
        if let Some(c) = counts.get_mut(t) {
            if *c > 0 {
                *c -= 1;
                overlap += 1;
            }
        }
    }
    if overlap == 0 {
        return 0.0;
    }
    let p = overlap as f64 / pred_tokens.len() as f64;
    let r = overlap as f64 / gold_tokens.len() as f64;
    2.0 * p * r / (p + r)
}

/// Token-multiset F1, best over all acceptable answers.
pub fn token_f1(prediction: &str, golds: &[String]) -> f64 {
    golds
        .iter()
        .map(|g| f1_single(prediction, g))
        .fold(0.0, f64::max)
}

/// 1 when the single retrieved document is the gold one.
pub fn hit_at_1(predicted_doc: Option<&EntityRef>, gold_doc: &EntityRef) -> f64 {
    match predicted_doc {
        Some(p) if entity_eq(p, gold_doc) => 1.0,
        _ => 0.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn qids(ids: &[u32]) -> EntitySet {
        ids.iter().map(|i| EntityRef::qid(format!("Q{i}")).unwrap()).collect()
    }

    fn golds(g: &[&str]) -> Vec<String> {
        g.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn el_metric_examples() {
        let s = el_metrics(&qids(&[1, 2]), &qids(&[1, 3]));
        assert_eq!((s.precision, s.recall, s.accuracy), (0.5, 0.5, 0.0));
        let s = el_metrics(&qids(&[5]), &qids(&[5]));
        assert_eq!((s.precision, s.recall, s.accuracy), (1.0, 1.0, 1.0));
        let s = el_metrics(&qids(&[]), &qids(&[1]));
        assert_eq!((s.precision, s.recall, s.accuracy), (0.0, 0.0, 0.0));
        let s = el_metrics(&qids(&[1]), &qids(&[]));
        assert_eq!((s.precision, s.recall, s.accuracy), (0.0, 0.0, 0.0));
        let s = el_metrics(&qids(&[]), &qids(&[]));
        assert_eq!((s.precision, s.recall, s.accuracy), (1.0, 1.0, 1.0));
    }

    #[test]
    fn el_metrics_use_title_normalization() {
        let p: EntitySet = [EntityRef::title("The_Girl in white").unwrap()].into();
        let g: EntitySet = [EntityRef::title("the girl in White").unwrap()].into();
        assert_eq!(el_metrics(&p, &g).accuracy, 1.0);
    }

    #[test]
    fn aggregate_examples() {
        let one = ElScores { precision: 1.0, recall: 1.0, accuracy: 1.0 };
        let zero = ElScores { precision: 0.0, recall: 0.0, accuracy: 0.0 };
        let s = aggregate_el(&[one, zero]).unwrap();
        assert_eq!((s.precision, s.recall, s.accuracy, s.queries), (50.0, 50.0, 50.0, 2));
        let s = aggregate_el(&[ElScores { precision: 0.5, recall: 1.0 / 3.0, accuracy: 0.0 }]).unwrap();
        assert_eq!((s.precision, s.recall), (50.0, 33.33));
        assert_eq!(aggregate_el(&[]), Err(EvalError::EmptyEvaluation));
        assert_eq!(aggregate_qa(&[]), Err(EvalError::EmptyEvaluation));
    }

    #[test]
    fn normalize_answer_examples() {
        assert_eq!(normalize_answer("The Beatles!"), "beatles");
        assert_eq!(normalize_answer("an  apple"), "apple");
        assert_eq!(normalize_answer("John F. Kennedy"), "john f kennedy");
        assert_eq!(normalize_answer("Theater"), "theater");
    }

    #[test]
    fn exact_match_examples() {
        assert_eq!(exact_match("the beatles", &golds(&["Beatles"])), 1.0);
        assert_eq!(exact_match("beatle", &golds(&["Beatles"])), 0.0);
        assert_eq!(exact_match("X", &golds(&["Y", "x"])), 1.0);
    }

    #[test]
    fn token_f1_examples() {
        assert!((token_f1("john kennedy", &golds(&["john f kennedy"])) - 0.8).abs() < 1e-9);
        assert_eq!(token_f1("John F. Kennedy", &golds(&["john f kennedy"])), 1.0);
        assert_eq!(token_f1("paris", &golds(&["london"])), 0.0);
        assert_eq!(token_f1("the", &golds(&["a"])), 1.0);
        assert_eq!(token_f1("x y", &golds(&["z", "y"])), 2.0 / 3.0);
    }

    #[test]
    fn hit_at_1_examples() {
        let nba = EntityRef::title("NBA").unwrap();
        assert_eq!(hit_at_1(Some(&EntityRef::title("nba").unwrap()), &nba), 1.0);
        assert_eq!(hit_at_1(None, &nba), 0.0);
        assert_eq!(hit_at_1(Some(&EntityRef::title("nba history").unwrap()), &nba), 0.0);
    }

    proptest! {
        #[test]
        fn exact_match_accuracy_properties(p in prop::collection::btree_set(0u32..10, 0..6),
                                           g in prop::collection::btree_set(0u32..10, 0..6)) {
            let (p, g) = (qids(&p.into_iter().collect::<Vec<_>>()), qids(&g.into_iter().collect::<Vec<_>>()));
            let forward = el_metrics(&p, &g);
            prop_assert_eq!(forward.accuracy, el_metrics(&g, &p).accuracy);
            if !g.is_empty() {
                prop_assert_eq!(forward.accuracy == 1.0, forward.precision == 1.0 && forward.recall == 1.0);
            }
        }

        #[test]
        fn token_f1_bounded_and_order_invariant(words in prop::collection::vec("[a-z]{1,4}", 0..6),
                                                gold in prop::collection::vec("[a-z]{1,4}", 0..6)) {
            let pred = words.join(" ");
            let mut reversed = words.clone();
            reversed.reverse();
            let golds = vec![gold.join(" ")];
            let f = token_f1(&pred, &golds);
            prop_assert!((0.0..=1.0).contains(&f));
            prop_assert_eq!(f, token_f1(&reversed.join(" "), &golds));
            prop_assert_eq!(token_f1(&pred, std::slice::from_ref(&pred)), 1.0);
        }

        #[test]
        fn normalize_answer_idempotent(s in "\\PC{0,30}") {
            let once = normalize_answer(&s);
            prop_assert_eq!(normalize_answer(&once), once);
        }
    }
}

use std::collections::{BTreeSet, HashMap};

use serde::Serialize;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RetrievalMetrics {
    /// `None` when there is no evidence to recall.
    pub recall: Option<f64>,
    /// `None` when nothing was retrieved.
    pub precision: Option<f64>,
    pub f1: f64,
    pub exact_match: bool,
}

const ARTICLES: [&str; 3] = ["a", "an", "the"];

/// Lowercase alphanumeric tokens with articles dropped.
pub fn normalize_tokens(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty() && !ARTICLES.contains(t))
        .map(str::to_string)
        .collect()
}

fn token_f1(predicted: &[String], gold: &[String]) -> f64 {
    if predicted.is_empty() || gold.is_empty() {
        return 0.0;
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in gold {
        *counts.entry(t).or_default() += 1;
    }
    let mut common = 0usize;
    for t in predicted {
        if let Some(c) = counts.get_mut(t.as_str()) {
            if *c > 0 {
                *c -= 1;
                common += 1;
            }
        }
    }
    if common == 0 {
        return 0.0;
    }
    let precision = common as f64 / predicted.len() as f64;
    let recall = common as f64 / gold.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Score one ranked result list against its evidence and answer.
///
/// F1 is token overlap between the concatenated retrieved texts and the
/// answer; exact match means the normalized answer appears as a contiguous
/// token run inside that context.
pub fn evaluate(
    retrieved: &[(u64, &str)],
    evidence: &BTreeSet<u64>,
    answer: &str,
) -> RetrievalMetrics {
    let retrieved_ids: BTreeSet<u64> = retrieved.iter().map(|(id, _)| *id).collect();
    let hits = retrieved_ids.intersection(evidence).count() as f64;
    let recall = (!evidence.is_empty()).then(|| hits / evidence.len() as f64);
    let precision = (!retrieved_ids.is_empty()).then(|| hits / retrieved_ids.len() as f64);

    let context: Vec<String> = retrieved
        .iter()
        .flat_map(|(_, text)| normalize_tokens(text))
        .collect();
    let gold = normalize_tokens(answer);
    let exact_match = !gold.is_empty()
        && format!(" {} ", context.join(" ")).contains(&format!(" {} ", gold.join(" ")));

    RetrievalMetrics {
        recall,
        precision,
        f1: token_f1(&context, &gold),
        exact_match,
    }
}

//! Retrieval benchmark over an ingested corpus and a question set.
//!
//! Questions are JSON lines `{"question", "answer", "evidence_turns": [int], "type"}`.
//! Each question is ranked read-only against the same ingested store, so
//! questions do not influence one another.

use std::collections::{BTreeMap, BTreeSet};
use std::io::BufRead;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{parse_jsonl, IngestSummary, Skipped};
use crate::retrieval::{evaluate, rank, RetrievalWeights};
use crate::store::MemoryStore;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Question {
    pub question: String,
    pub answer: String,
    pub evidence_turns: Vec<i64>,
    #[serde(rename = "type", default = "default_type")]
    pub kind: String,
}

fn default_type() -> String {
    "unlabeled".into()
}

pub fn parse_questions(
    reader: impl BufRead,
    skip_errors: bool,
) -> Result<(Vec<(usize, Question)>, Vec<Skipped>)> {
    parse_jsonl(reader, skip_errors)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BenchMode {
    Field,
    Baseline,
}

impl BenchMode {
    pub fn as_str(self) -> &'static str {
        match self {
            BenchMode::Field => "field",
            BenchMode::Baseline => "baseline",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum QuestionStatus {
    Scored,
    /// An evidence turn id does not appear in the corpus.
    MissingEvidence,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuestionResult {
    pub mode: BenchMode,
    pub index: usize,
    pub kind: String,
    pub status: QuestionStatus,
    pub recall: Option<f64>,
    pub precision: Option<f64>,
    pub f1: Option<f64>,
    pub exact_match: Option<bool>,
    pub retrieved: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Aggregate {
    pub mode: BenchMode,
    pub kind: String,
    pub questions: usize,
    pub scored: usize,
    pub recall: Option<f64>,
    pub precision: Option<f64>,
    pub f1: Option<f64>,
    pub exact_match: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub results: Vec<QuestionResult>,
    pub aggregates: Vec<Aggregate>,
}

/// Rank every question in each mode. Field mode uses `field_weights`;
/// baseline mode uses pure cosine. Rankings are taken at the store clock.
pub fn run_bench(
    store: &MemoryStore,
    ingest: &IngestSummary,
    questions: &[Question],
    modes: &[BenchMode],
    k: usize,
    field_weights: &RetrievalWeights,
) -> Result<BenchReport> {
    if k == 0 {
        return Err(Error::InvalidParams("k must be at least 1".into()));
    }
    let now = store.clock();
    let mut results = Vec::new();
    for &mode in modes {
        let weights = match mode {
            BenchMode::Field => *field_weights,
            BenchMode::Baseline => RetrievalWeights::baseline(),
        };
        for (index, q) in questions.iter().enumerate() {
            results.push(score_question(
                store, ingest, q, index, mode, k, &weights, now,
            )?);
        }
    }
    let aggregates = aggregate(&results);
    Ok(BenchReport {
        results,
        aggregates,
    })
}

#[allow(clippy::too_many_arguments)]
fn score_question(
    store: &MemoryStore,
    ingest: &IngestSummary,
    q: &Question,
    index: usize,
    mode: BenchMode,
    k: usize,
    weights: &RetrievalWeights,
    now: f64,
) -> Result<QuestionResult> {
    let mut evidence = BTreeSet::new();
    let mut missing = false;
    for turn in &q.evidence_turns {
        match ingest.turn_ids.get(turn) {
            Some(ids) => evidence.extend(ids.iter().copied()),
            None => missing = true,
        }
    }
    let unscored = |status| QuestionResult {
        mode,
        index,
        kind: q.kind.clone(),
        status,
        recall: None,
        precision: None,
        f1: None,
        exact_match: None,
        retrieved: Vec::new(),
    };
    if missing {
        return Ok(unscored(QuestionStatus::MissingEvidence));
    }
    if q.question.trim().is_empty() {
        return Err(Error::EmptyQuery);
    }
    let query = store.embed(&q.question)?;
    let ranked = if store.is_empty() {
        Vec::new()
    } else {
        rank(store, &query, k, weights, now)?
    };
    let retrieved: Vec<(u64, &str)> = ranked
        .iter()
        .map(|r| {
            (
                r.memory_id,
                store.records()[r.memory_id as usize].text.as_str(),
            )
        })
        .collect();
    let m = evaluate(&retrieved, &evidence, &q.answer);
    Ok(QuestionResult {
        mode,
        index,
        kind: q.kind.clone(),
        status: QuestionStatus::Scored,
        recall: m.recall,
        precision: m.precision,
        f1: Some(m.f1),
        exact_match: Some(m.exact_match),
        retrieved: ranked.iter().map(|r| r.memory_id).collect(),
    })
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Per (mode, type) means plus an "all" row per mode. Undefined recall or
/// precision values are left out of their means.
pub fn aggregate(results: &[QuestionResult]) -> Vec<Aggregate> {
    let mut groups: BTreeMap<(BenchMode, String), Vec<&QuestionResult>> = BTreeMap::new();
    for r in results {
        groups.entry((r.mode, r.kind.clone())).or_default().push(r);
        groups.entry((r.mode, "all".into())).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|((mode, kind), rs)| {
            let scored: Vec<&&QuestionResult> = rs
                .iter()
                .filter(|r| r.status == QuestionStatus::Scored)
                .collect();
            Aggregate {
                mode,
                kind,
                questions: rs.len(),
                scored: scored.len(),
                recall: mean(scored.iter().filter_map(|r| r.recall)),
                precision: mean(scored.iter().filter_map(|r| r.precision)),
                f1: mean(scored.iter().filter_map(|r| r.f1)),
                exact_match: mean(
                    scored
                        .iter()
                        .filter_map(|r| r.exact_match.map(|b| if b { 1.0 } else { 0.0 })),
                ),
            }
        })
        .collect()
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

impl BenchReport {
    pub fn per_question_csv(&self) -> String {
        let mut out =
            String::from("mode,index,type,status,recall,precision,f1,exact_match,retrieved\n");
        for r in &self.results {
            let ids: Vec<String> = r.retrieved.iter().map(u64::to_string).collect();
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                r.mode.as_str(),
                r.index,
                csv_field(&r.kind),
                match r.status {
                    QuestionStatus::Scored => "scored",
                    QuestionStatus::MissingEvidence => "missing_evidence",
                },
                opt(r.recall),
                opt(r.precision),
                opt(r.f1),
                r.exact_match.map(|b| b.to_string()).unwrap_or_default(),
                ids.join(" "),
            ));
        }
        out
    }

    pub fn aggregate_csv(&self) -> String {
        let mut out = String::from("mode,type,questions,scored,recall,precision,f1,exact_match\n");
        for a in &self.aggregates {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                a.mode.as_str(),
                csv_field(&a.kind),
                a.questions,
                a.scored,
                opt(a.recall),
                opt(a.precision),
                opt(a.f1),
                opt(a.exact_match),
            ));
        }
        out
    }

    /// Fixed-width summary table for terminals.
    pub fn summary_table(&self) -> String {
        let mut out = format!(
            "{:<9} {:<16} {:>5} {:>8} {:>9} {:>7} {:>7}\n",
            "mode", "type", "n", "recall", "precision", "f1", "em"
        );
        let cell = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into());
        for a in &self.aggregates {
            out.push_str(&format!(
                "{:<9} {:<16} {:>5} {:>8} {:>9} {:>7} {:>7}\n",
                a.mode.as_str(),
                a.kind,
                a.questions,
                cell(a.recall),
                cell(a.precision),
                cell(a.f1),
                cell(a.exact_match),
            ));
        }
        out
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

//! JSON-lines conversation corpora.
//!
//! One object per line:
//! `{"session": str, "turn": int, "role": "user"|"assistant", "text": str, "time": float, "importance": float?}`.
//! Blank lines are ignored. Turns are injected in time order (stable for
//! equal times); the store's own catch-up runs evolution between them.

use std::collections::BTreeMap;
use std::io::BufRead;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::store::MemoryStore;

pub const DEFAULT_TURN_IMPORTANCE: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Turn {
    pub session: String,
    pub turn: i64,
    pub role: Role,
    pub text: String,
    pub time: f64,
    #[serde(default)]
    pub importance: Option<f64>,
}

/// A line that was rejected and skipped.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Skipped {
    pub line: usize,
    pub message: String,
}

/// Parse a JSON-lines stream of `T`. With `skip_errors`, bad lines are
/// collected instead of aborting. Lines are numbered from 1.
pub fn parse_jsonl<T: serde::de::DeserializeOwned>(
    reader: impl BufRead,
    skip_errors: bool,
) -> Result<(Vec<(usize, T)>, Vec<Skipped>)> {
    let mut items = Vec::new();
    let mut skipped = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<T>(&line) {
            Ok(v) => items.push((line_no, v)),
            Err(e) if skip_errors => skipped.push(Skipped {
                line: line_no,
                message: e.to_string(),
            }),
            Err(e) => {
                return Err(Error::Parse {
                    line: line_no,
                    message: e.to_string(),
                })
            }
        }
    }
    Ok((items, skipped))
}

pub fn parse_turns(
    reader: impl BufRead,
    skip_errors: bool,
) -> Result<(Vec<(usize, Turn)>, Vec<Skipped>)> {
    parse_jsonl(reader, skip_errors)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct IngestSummary {
    pub added: usize,
    pub steps: u64,
    pub skipped: Vec<Skipped>,
    /// Memory ids created for each turn number.
    #[serde(skip)]
    pub turn_ids: BTreeMap<i64, Vec<u64>>,
}

/// Inject parsed turns into `store`. Per-turn failures (empty text, bad
/// importance, provider errors, timestamps before the store clock) abort
/// with the line number, or are recorded when `skip_errors` is set.
pub fn ingest_turns(
    store: &mut MemoryStore,
    turns: Vec<(usize, Turn)>,
    skip_errors: bool,
) -> Result<IngestSummary> {
    let mut turns = turns;
    turns.sort_by(|a, b| a.1.time.total_cmp(&b.1.time));
    let steps_before = store.evolved_steps();
    let mut summary = IngestSummary::default();
    for (line, turn) in turns {
        let importance = turn.importance.unwrap_or(DEFAULT_TURN_IMPORTANCE);
        match store.inject_in_session(
            &turn.text,
            importance,
            turn.time,
            Some(turn.session.clone()),
        ) {
            Ok(record) => {
                summary.added += 1;
                summary
                    .turn_ids
                    .entry(turn.turn)
                    .or_default()
                    .push(record.id);
            }
            Err(e @ Error::NumericalBlowup { .. }) => return Err(e),
            Err(e) if skip_errors => summary.skipped.push(Skipped {
                line,
                message: e.to_string(),
            }),
            Err(Error::Parse { message, .. }) => return Err(Error::Parse { line, message }),
            Err(e @ (Error::ProviderUnavailable(_) | Error::Io { .. })) => return Err(e),
            Err(e) => {
                return Err(Error::Parse {
                    line,
                    message: e.to_string(),
                })
            }
        }
    }
    summary.steps = store.evolved_steps() - steps_before;
    Ok(summary)
}

/// Parse and ingest in one pass; parse skips are merged into the summary.
pub fn ingest_reader(
    store: &mut MemoryStore,
    reader: impl BufRead,
    skip_errors: bool,
) -> Result<IngestSummary> {
    let (turns, mut skipped) = parse_turns(reader, skip_errors)?;
    let mut summary = ingest_turns(store, turns, skip_errors)?;
    skipped.append(&mut summary.skipped);
    skipped.sort_by_key(|s| s.line);
    summary.skipped = skipped;
    Ok(summary)
}

/// Earliest turn time, used to start a fresh store so evolution does not
/// replay time before the conversation began.
pub fn earliest_time(turns: &[(usize, Turn)]) -> Option<f64> {
    turns.iter().map(|(_, t)| t.time).min_by(f64::total_cmp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::LocalEmbedder;
    use crate::field::FieldParams;
    use crate::store::StoreConfig;
    use std::sync::Arc;

    fn store() -> MemoryStore {
        let config = StoreConfig {
            params: FieldParams {
                grid_size: 32,
                ..FieldParams::default()
            },
            ..StoreConfig::default()
        };
        MemoryStore::new(config, Arc::new(LocalEmbedder::default())).unwrap()
    }

    fn line(turn: i64, time: f64, text: &str) -> String {
        format!(r#"{{"session":"s1","turn":{turn},"role":"user","text":"{text}","time":{time}}}"#)
    }

    #[test]
    fn empty_input() {
        let mut s = store();
        let summary = ingest_reader(&mut s, "".as_bytes(), false).unwrap();
        assert_eq!(summary.added, 0);
        assert!(s.is_empty());
    }

    #[test]
    fn ten_turns_in_order() {
        let mut s = store();
        let body: Vec<String> = (0..10)
            .map(|i| line(i, i as f64 * 0.5, &format!("turn number {i}")))
            .collect();
        let summary = ingest_reader(&mut s, body.join("\n").as_bytes(), false).unwrap();
        assert_eq!(summary.added, 10);
        assert_eq!(s.len(), 10);
        assert_eq!(s.clock(), 4.5);
        assert_eq!(summary.steps, 45);
        assert_eq!(summary.turn_ids[&3], vec![3]);
        assert_eq!(s.records()[0].session_id.as_deref(), Some("s1"));
    }

    #[test]
    fn out_of_order_turns_sorted_by_time() {
        let mut s = store();
        let body = [line(1, 2.0, "later"), line(0, 1.0, "earlier")].join("\n");
        let summary = ingest_reader(&mut s, body.as_bytes(), false).unwrap();
        assert_eq!(s.records()[0].text, "earlier");
        assert_eq!(summary.turn_ids[&1], vec![1]);
    }

    #[test]
    fn malformed_line_reported_with_number() {
        let mut body: Vec<String> = (0..10).map(|i| line(i, i as f64, "ok")).collect();
        body[4] = "{not json".into();
        let err = ingest_reader(&mut store(), body.join("\n").as_bytes(), false).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 5, .. }), "{err}");

        let mut s = store();
        let summary = ingest_reader(&mut s, body.join("\n").as_bytes(), true).unwrap();
        assert_eq!(summary.added, 9);
        assert_eq!(summary.skipped.len(), 1);
        assert_eq!(summary.skipped[0].line, 5);
    }

    #[test]
    fn invalid_turn_values_reported() {
        let body = [line(0, 0.0, "fine"), line(1, 1.0, "   ")].join("\n");
        let err = ingest_reader(&mut store(), body.as_bytes(), false).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        let bad_importance =
            r#"{"session":"s","turn":0,"role":"assistant","text":"x","time":0,"importance":3.0}"#;
        let summary = ingest_reader(&mut store(), bad_importance.as_bytes(), true).unwrap();
        assert_eq!(summary.added, 0);
        assert_eq!(summary.skipped[0].line, 1);
    }

    #[test]
    fn unknown_role_rejected() {
        let bad = r#"{"session":"s","turn":0,"role":"system","text":"x","time":0}"#;
        assert!(matches!(
            ingest_reader(&mut store(), bad.as_bytes(), false),
            Err(Error::Parse { line: 1, .. })
        ));
    }
}

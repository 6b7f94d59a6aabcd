use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn fieldmem(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fieldmem"))
        .args(args)
        .env_remove("EMBED_ENDPOINT")
        .env_remove("EMBED_TIMEOUT_MS")
        .output()
        .expect("binary runs")
}

fn ok_json(args: &[&str]) -> Value {
    let out = fieldmem(args);
    assert!(
        out.status.success(),
        "{:?} failed: {}",
        args,
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("json on stdout")
}

fn turn(i: usize, text: &str) -> String {
    format!(r#"{{"session":"s{}","turn":{i},"role":"user","text":"{text}","time":{}}}"#, i / 5, i as f64)
}

fn write_corpus(path: &Path, lines: &[String]) {
    std::fs::write(path, lines.join("\n")).unwrap();
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn ingest_empty_file_creates_empty_snapshot() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("empty.jsonl");
    let snap = dir.path().join("m.fmem");
    std::fs::write(&corpus, "").unwrap();
    let v = ok_json(&["--grid-size", "32", "ingest", s(&corpus), "--snapshot", s(&snap)]);
    assert_eq!(v["added"], 0);
    assert_eq!(v["records"], 0);
    assert!(snap.exists());
}

#[test]
fn ingest_ten_turns_then_query() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("c.jsonl");
    let snap = dir.path().join("m.fmem");
    let texts = [
        "deploys run every friday",
        "the database is postgres 16",
        "staging listens on port 8443",
        "alice owns the billing service",
        "logs are shipped to loki",
        "the cache is redis",
        "backups happen nightly",
        "bob is on call this week",
        "the api gateway is envoy",
        "tests run on every push",
    ];
    let lines: Vec<String> = texts.iter().enumerate().map(|(i, t)| turn(i, t)).collect();
    write_corpus(&corpus, &lines);
    let v = ok_json(&["--grid-size", "32", "ingest", s(&corpus), "--snapshot", s(&snap)]);
    assert_eq!(v["added"], 10);
    assert_eq!(v["clock"], 9.0);

    let baseline = ok_json(&["query", s(&snap), "which port does staging listen on", "-k", "3", "--weights", "1,0,0,0"]);
    let rows = baseline.as_array().unwrap();
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[0]["id"], 2);
    assert_eq!(rows[0]["text"], "staging listens on port 8443");
    let comp = &rows[0]["components"];
    assert!(comp["sim"].as_f64().unwrap() > 0.5);
    assert!(comp.get("recency").is_some());

    let csv = dir.path().join("f.csv");
    let pgm = dir.path().join("f.pgm");
    let e = ok_json(&["export", s(&snap), "--out", s(&csv)]);
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().count() as u64, 1 + e["active_cells"].as_u64().unwrap());
    ok_json(&["export", s(&snap), "--out", s(&pgm), "--format", "pgm"]);
    let bytes = std::fs::read(&pgm).unwrap();
    assert!(bytes.starts_with(b"P5\n32 32\n255\n"));
}

#[test]
fn query_records_access_in_snapshot() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("c.jsonl");
    let snap = dir.path().join("m.fmem");
    write_corpus(&corpus, &[turn(0, "only memory here")]);
    ok_json(&["--grid-size", "32", "ingest", s(&corpus), "--snapshot", s(&snap)]);
    let before = std::fs::read(&snap).unwrap();
    let v = ok_json(&["query", s(&snap), "memory", "-k", "1"]);
    assert_eq!(v[0]["id"], 0);
    assert_ne!(std::fs::read(&snap).unwrap(), before);
}

#[test]
fn skip_errors_reports_bad_line() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("c.jsonl");
    let snap = dir.path().join("m.fmem");
    let mut lines: Vec<String> = (0..10).map(|i| turn(i, &format!("fact number {i}"))).collect();
    lines[3] = "{broken".into();
    write_corpus(&corpus, &lines);

    let out = fieldmem(&["--grid-size", "32", "ingest", s(&corpus), "--snapshot", s(&snap)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 4"));

    let v = ok_json(&["--grid-size", "32", "ingest", s(&corpus), "--snapshot", s(&snap), "--skip-errors"]);
    assert_eq!(v["added"], 9);
    assert_eq!(v["skipped"].as_array().unwrap().len(), 1);
    assert_eq!(v["skipped"][0]["line"], 4);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    // Bad weights: input error.
    let out = fieldmem(&["--weights", "0.5,0.5,0.5,0", "simulate"]);
    assert_eq!(out.status.code(), Some(1));
    // Unparseable arguments are input errors too.
    assert_eq!(fieldmem(&["no-such-command"]).status.code(), Some(1));
    // Missing snapshot: IO error.
    let missing = dir.path().join("missing.fmem");
    assert_eq!(fieldmem(&["query", s(&missing), "x"]).status.code(), Some(3));
    // Corrupt snapshot.
    let junk = dir.path().join("junk.fmem");
    std::fs::write(&junk, b"FMEM\x01\0\0\0garbage-garbage").unwrap();
    assert_eq!(fieldmem(&["query", s(&junk), "x"]).status.code(), Some(3));
    // dt above the stability limit is rejected before any work.
    let out = fieldmem(&["--dt", "50", "simulate"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("dt"));
}

#[test]
fn evolve_advances_clock() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("c.jsonl");
    let snap = dir.path().join("m.fmem");
    write_corpus(&corpus, &[turn(0, "decaying memory")]);
    ok_json(&["--grid-size", "32", "ingest", s(&corpus), "--snapshot", s(&snap)]);
    let v = ok_json(&["evolve", s(&snap), "--steps", "20"]);
    assert_eq!(v["steps"], 20);
    let v = ok_json(&["evolve", s(&snap), "--until", "5.0"]);
    assert_eq!(v["steps"], 30);
    assert_eq!(v["clock"], 5.0);
}

#[test]
fn simulate_reports_and_writes_trace() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("trace.csv");
    let v = ok_json(&["simulate", "--agents", "2", "--out", s(&trace)]);
    assert_eq!(v["status"], "converged");
    assert!(v["final_ci"].as_f64().unwrap() >= 0.99);
    let text = std::fs::read_to_string(&trace).unwrap();
    assert!(text.starts_with("step,ci,max_pairwise_diff,active_cells_total"));

    let v = ok_json(&["simulate", "--agents", "4"]);
    assert_eq!(v["sharing_efficiency"], 1.0);

    let v = ok_json(&["simulate", "--agents", "2", "--coupling", "0", "--steps", "30"]);
    assert_eq!(v["status"], "no_convergence");
}

#[test]
fn bench_modes() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("c.jsonl");
    let questions = dir.path().join("q.jsonl");
    let per_q = dir.path().join("per.csv");
    let agg = dir.path().join("agg.csv");
    write_corpus(&corpus, &[turn(4, "the deploy key rotates monthly")]);
    std::fs::write(
        &questions,
        r#"{"question":"how often does the deploy key rotate","answer":"monthly","evidence_turns":[4],"type":"single"}"#,
    )
    .unwrap();
    let out = fieldmem(&[
        "--grid-size", "32", "bench", "--corpus", s(&corpus), "--questions", s(&questions), "--csv", s(&per_q), "--summary-csv", s(&agg),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let table = String::from_utf8_lossy(&out.stdout);
    assert!(table.contains("field") && table.contains("baseline"));
    let rows = std::fs::read_to_string(&per_q).unwrap();
    assert_eq!(rows.lines().count(), 3);
    for line in rows.lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        assert_eq!(cols[4], "1.000000", "{line}");
    }
    assert!(std::fs::read_to_string(&agg).unwrap().contains("single"));

    std::fs::write(&questions, "").unwrap();
    let out = fieldmem(&["--grid-size", "32", "bench", "--corpus", s(&corpus), "--questions", s(&questions)]);
    assert!(out.status.success());
}

#[test]
fn concurrent_writer_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("c.jsonl");
    let snap = dir.path().join("m.fmem");
    write_corpus(&corpus, &[turn(0, "locked memory")]);
    ok_json(&["--grid-size", "32", "ingest", s(&corpus), "--snapshot", s(&snap)]);
    let lock_path = dir.path().join("m.fmem.lock");
    let holder = std::fs::OpenOptions::new().write(true).open(&lock_path).unwrap();
    holder.lock().unwrap();
    let out = fieldmem(&["query", s(&snap), "memory"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("locked"));
    holder.unlock().unwrap();
    ok_json(&["query", s(&snap), "memory"]);
}

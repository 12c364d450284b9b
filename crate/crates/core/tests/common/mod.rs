#![allow(dead_code)]

use std::fs;
use std::path::Path;

use indexmap::IndexMap;
use zsl_emotion::experiment::{CorpusFormatKind, CorpusSpec, RunConfig};

pub const FIXTURE_LABELS: [&str; 3] = ["anger", "fear", "joy"];

pub const FIXTURE: [(&str, &str, &str); 5] = [
    (
        "i1",
        "My landlord kept the deposit for no reason at all.",
        "anger",
    ),
    (
        "i2",
        "I heard footsteps behind me on the empty street.",
        "fear",
    ),
    ("i3", "We finally got the keys to our first home!", "joy"),
    ("i4", "The exam results come out tomorrow morning.", "fear"),
    ("i5", "Someone scratched my car and drove off.", "anger"),
];

pub fn write_fixture_corpus(path: &Path) {
    let mut body = String::new();
    for (id, text, label) in FIXTURE {
        let row = serde_json::json!({"id": id, "text": text, "label": label});
        body.push_str(&row.to_string());
        body.push('\n');
    }
    fs::write(path, body).unwrap();
}

/// Mock-backed config over the five-instance fixture, cached in `dir`.
pub fn fixture_config(dir: &Path, methods: &[&str]) -> RunConfig {
    let corpus = dir.join("fixture.jsonl");
    write_fixture_corpus(&corpus);
    RunConfig {
        corpus: Some(CorpusSpec {
            name: Some("fixture".into()),
            path: corpus,
            format: CorpusFormatKind::Jsonl,
            delimited: None,
            mapping: IndexMap::new(),
            skip_malformed: false,
        }),
        labels: FIXTURE_LABELS.iter().map(|s| s.to_string()).collect(),
        methods: methods.iter().map(|s| s.to_string()).collect(),
        ensemble: true,
        cache_dir: Some(dir.join("cache")),
        output_dir: dir.join("runs"),
        batch_size: 7,
        ..RunConfig::default()
    }
}

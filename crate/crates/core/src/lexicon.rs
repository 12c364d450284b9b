//! Word-emotion association lexicons as prompt sources.
//!
//! The input is the NRC word-level layout: one `term \t category \t flag`
//! row per (term, category) pair, with flag `1` marking an association.
//! Every associated term becomes a bare hypothesis for the label its
//! category maps to.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use crate::error::{Error, Result};
use crate::prompts::{MethodOrigin, PromptContext, PromptMethod};
use crate::taxonomy::LabelSet;
use crate::text;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LexiconRecord {
    pub term: String,
    pub category: String,
    pub associated: bool,
}

impl LexiconRecord {
    pub fn new(term: &str, category: &str, associated: bool) -> Self {
        Self {
            term: term.to_string(),
            category: category.to_string(),
            associated,
        }
    }
}

pub fn parse_lexicon(raw: &str, source_name: &str) -> Result<Vec<LexiconRecord>> {
    let mut records = Vec::new();
    for (i, line) in raw.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let malformed = |reason: String| Error::MalformedRecord {
            source_name: source_name.to_string(),
            line: i + 1,
            reason,
        };
        let cols: Vec<&str> = line.split('\t').collect();
        let [term, category, flag] = cols[..] else {
            return Err(malformed(format!("expected 3 columns, got {}", cols.len())));
        };
        let associated = match flag.trim() {
            "1" => true,
            "0" => false,
            other => return Err(malformed(format!("flag must be 0 or 1, got `{other}`"))),
        };
        if term.trim().is_empty() || category.trim().is_empty() {
            return Err(malformed("empty term or category".into()));
        }
        records.push(LexiconRecord {
            term: term.to_string(),
            category: category.trim().to_string(),
            associated,
        });
    }
    Ok(records)
}

pub fn read_lexicon(path: &Path) -> Result<Vec<LexiconRecord>> {
    let raw = std::fs::read_to_string(path)
        .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    parse_lexicon(&raw, &path.display().to_string())
}

/// Builds an empty-context method whose surface forms for label `e` are the
/// associated terms of every category mapped to `e`, lowercased, trimmed,
/// NFC-normalized and deduplicated in first-seen order. Categories absent
/// from `category_map` are ignored.
pub fn load_lexicon_method(
    id: &str,
    records: &[LexiconRecord],
    category_map: &HashMap<String, String>,
    labels: &LabelSet,
) -> Result<PromptMethod> {
    if let Some(target) = category_map.values().find(|t| !labels.contains(t)) {
        return Err(Error::UnknownLabel(target.clone()));
    }

    let mut terms: HashMap<String, Vec<String>> = HashMap::new();
    let mut seen: HashSet<(String, String)> = HashSet::new();
    for record in records.iter().filter(|r| r.associated) {
        let Some(label) = category_map.get(&record.category) else {
            continue;
        };
        let term = text::clean(&record.term.to_lowercase());
        if term.is_empty() {
            continue;
        }
        if seen.insert((label.clone(), term.clone())) {
            terms.entry(label.clone()).or_default().push(term);
        }
    }

    if let Some(empty) = labels.iter().find(|l| !terms.contains_key(l.id())) {
        return Err(Error::LabelWithoutEntries(empty.id().to_string()));
    }
    PromptMethod::from_surfaces(
        id,
        PromptContext::Empty,
        MethodOrigin::Lexicon,
        labels,
        terms,
    )
}

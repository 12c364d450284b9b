//! Labeled corpora.
//!
//! Every source layout is converted at the boundary into the canonical
//! form: one JSON object per line with `id`, `text` and `label` (string or
//! null). Source label tokens go through a [`LabelMapping`] which must cover
//! every token encountered; a token mapped to `DISCARD` drops its instance.

use std::collections::HashSet;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::taxonomy::LabelSet;
use crate::text;

/// Mapping target that drops an instance.
pub const DISCARD: &str = "DISCARD";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instance {
    pub id: String,
    pub text: String,
    #[serde(rename = "label")]
    pub gold: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    pub name: String,
    pub instances: Vec<Instance>,
    pub labels: LabelSet,
}

impl Corpus {
    /// Validates ids, texts and gold labels.
    pub fn new(name: &str, instances: Vec<Instance>, labels: LabelSet) -> Result<Self> {
        if instances.is_empty() {
            return Err(Error::EmptyCorpus(name.to_string()));
        }
        let mut ids = HashSet::with_capacity(instances.len());
        for inst in &instances {
            if inst.text.trim().is_empty() {
                return Err(Error::Config(format!(
                    "instance `{}` has empty text",
                    inst.id
                )));
            }
            if !ids.insert(inst.id.as_str()) {
                return Err(Error::Duplicate(inst.id.clone()));
            }
            if let Some(gold) = &inst.gold {
                labels.label(gold)?;
            }
        }
        Ok(Self {
            name: name.to_string(),
            instances,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn all_gold(&self) -> bool {
        self.instances.iter().all(|i| i.gold.is_some())
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for inst in &self.instances {
            let line = serde_json::to_string(inst).expect("instance serializes");
            writeln!(out, "{line}").map_err(|e| Error::io("writing corpus", e))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ColumnRef {
    Index(usize),
    Name(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DelimitedConfig {
    #[serde(default = "default_delimiter")]
    pub delimiter: char,
    #[serde(default = "default_quote")]
    pub quote: char,
    #[serde(default = "default_true")]
    pub header: bool,
    pub text_column: ColumnRef,
    pub label_column: ColumnRef,
    #[serde(default)]
    pub id_column: Option<ColumnRef>,
    /// Strip one leading `#` from label tokens (hashtag-labeled tweets).
    #[serde(default)]
    pub strip_hashtag: bool,
}

fn default_delimiter() -> char {
    '\t'
}

fn default_quote() -> char {
    '"'
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CorpusFormat {
    Jsonl,
    Delimited(DelimitedConfig),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MappingTarget {
    Label(String),
    Discard,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LabelMapping {
    pairs: IndexMap<String, MappingTarget>,
}

impl LabelMapping {
    /// Every label id maps to itself.
    pub fn identity(labels: &LabelSet) -> Self {
        let pairs = labels
            .ids()
            .map(|id| (id.to_string(), MappingTarget::Label(id.to_string())))
            .collect();
        Self { pairs }
    }

    /// Adds `token → target`, where a target of `DISCARD` drops instances.
    pub fn insert(&mut self, token: &str, target: &str) {
        let target = if target == DISCARD {
            MappingTarget::Discard
        } else {
            MappingTarget::Label(target.to_string())
        };
        self.pairs.insert(token.trim().to_string(), target);
    }

    pub fn with(mut self, pairs: impl IntoIterator<Item = (String, String)>) -> Self {
        for (token, target) in pairs {
            self.insert(&token, &target);
        }
        self
    }

    pub fn get(&self, token: &str) -> Option<&MappingTarget> {
        self.pairs.get(token)
    }

    fn validate(&self, labels: &LabelSet) -> Result<()> {
        for target in self.pairs.values() {
            if let MappingTarget::Label(id) = target {
                labels.label(id)?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct LoadStats {
    pub source_rows: usize,
    pub loaded: usize,
    pub discarded: usize,
    pub failed: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct LoadOptions {
    /// Count and skip malformed rows instead of failing the load.
    pub skip_malformed: bool,
}

/// One raw row before label mapping.
struct RawRow {
    row: usize,
    id: Option<String>,
    text: Option<String>,
    label: Option<String>,
}

pub fn load_corpus(
    path: &Path,
    name: &str,
    format: &CorpusFormat,
    mapping: &LabelMapping,
    labels: &LabelSet,
    options: LoadOptions,
) -> Result<(Corpus, LoadStats)> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::io(format!("opening corpus {}", path.display()), e))?;
    read_corpus(file, name, format, mapping, labels, options)
}

pub fn read_corpus<R: Read>(
    reader: R,
    name: &str,
    format: &CorpusFormat,
    mapping: &LabelMapping,
    labels: &LabelSet,
    options: LoadOptions,
) -> Result<(Corpus, LoadStats)> {
    mapping.validate(labels)?;
    let rows = match format {
        CorpusFormat::Jsonl => read_jsonl_rows(reader, name)?,
        CorpusFormat::Delimited(cfg) => read_delimited_rows(reader, name, cfg)?,
    };

    let mut stats = LoadStats {
        source_rows: rows.len(),
        ..LoadStats::default()
    };
    let mut instances = Vec::with_capacity(rows.len());
    let mut ids = HashSet::with_capacity(rows.len());

    for raw in rows {
        let row = raw.row;
        match convert_row(raw, mapping, &ids) {
            Ok(Some(inst)) => {
                ids.insert(inst.id.clone());
                instances.push(inst);
            }
            Ok(None) => stats.discarded += 1,
            Err(RowError::Unmapped(token)) => return Err(Error::UnmappedLabel { token, row }),
            Err(RowError::Malformed(reason)) => {
                if !options.skip_malformed {
                    return Err(Error::MalformedRecord {
                        source_name: name.to_string(),
                        line: row,
                        reason,
                    });
                }
                log::warn!("{name}: skipping row {row}: {reason}");
                stats.failed += 1;
            }
        }
    }

    stats.loaded = instances.len();
    if instances.is_empty() {
        return Err(Error::EmptyCorpus(name.to_string()));
    }
    if stats.discarded > 0 {
        log::info!(
            "{name}: discarded {} instances by label mapping",
            stats.discarded
        );
    }
    let corpus = Corpus::new(name, instances, labels.clone())?;
    Ok((corpus, stats))
}

enum RowError {
    Unmapped(String),
    Malformed(String),
}

/// `Ok(None)` means the row was discarded by the mapping.
fn convert_row(
    raw: RawRow,
    mapping: &LabelMapping,
    seen: &HashSet<String>,
) -> std::result::Result<Option<Instance>, RowError> {
    let malformed = |r: &str| RowError::Malformed(r.to_string());
    let text = text::clean(&raw.text.ok_or_else(|| malformed("missing text"))?);
    if text.is_empty() {
        return Err(malformed("empty text"));
    }
    let id = raw
        .id
        .map(|s| s.trim().to_string())
        .unwrap_or_else(|| raw.row.to_string());
    if id.is_empty() {
        return Err(malformed("empty id"));
    }
    if seen.contains(&id) {
        return Err(RowError::Malformed(format!("duplicate id `{id}`")));
    }
    let gold = match raw.label {
        None => None,
        Some(token) => match mapping.get(token.trim()) {
            Some(MappingTarget::Label(l)) => Some(l.clone()),
            Some(MappingTarget::Discard) => return Ok(None),
            None => return Err(RowError::Unmapped(token.trim().to_string())),
        },
    };
    Ok(Some(Instance { id, text, gold }))
}

fn read_jsonl_rows<R: Read>(reader: R, name: &str) -> Result<Vec<RawRow>> {
    #[derive(Deserialize)]
    struct Line {
        id: Option<serde_json::Value>,
        text: Option<String>,
        label: Option<String>,
    }

    let mut rows = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line.map_err(|e| Error::io(format!("reading {name}"), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let row = i + 1;
        match serde_json::from_str::<Line>(&line) {
            Ok(parsed) => rows.push(RawRow {
                row,
                id: parsed.id.map(|v| match v {
                    serde_json::Value::String(s) => s,
                    other => other.to_string(),
                }),
                text: parsed.text,
                label: parsed.label,
            }),
            // Unparseable lines are kept as text-less rows so they count as malformed.
            Err(_) => rows.push(RawRow {
                row,
                id: None,
                text: None,
                label: None,
            }),
        }
    }
    Ok(rows)
}

fn read_delimited_rows<R: Read>(
    reader: R,
    name: &str,
    cfg: &DelimitedConfig,
) -> Result<Vec<RawRow>> {
    let single_byte = |c: char, what: &str| -> Result<u8> {
        u8::try_from(c)
            .ok()
            .filter(u8::is_ascii)
            .ok_or_else(|| Error::Config(format!("{what} must be a single ASCII character")))
    };
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(single_byte(cfg.delimiter, "delimiter")?)
        .quote(single_byte(cfg.quote, "quote")?)
        .has_headers(cfg.header)
        .flexible(true)
        .from_reader(reader);

    let headers = if cfg.header {
        Some(
            rdr.headers()
                .map_err(|e| Error::Config(format!("{name}: cannot read header: {e}")))?
                .clone(),
        )
    } else {
        None
    };
    let resolve = |col: &ColumnRef| -> Result<usize> {
        match (col, &headers) {
            (ColumnRef::Index(i), _) => Ok(*i),
            (ColumnRef::Name(n), Some(h)) => h
                .iter()
                .position(|c| c.trim() == n)
                .ok_or_else(|| Error::Config(format!("{name}: no column named `{n}`"))),
            (ColumnRef::Name(n), None) => Err(Error::Config(format!(
                "{name}: column `{n}` referenced by name but the file has no header"
            ))),
        }
    };
    let text_col = resolve(&cfg.text_column)?;
    let label_col = resolve(&cfg.label_column)?;
    let id_col = cfg.id_column.as_ref().map(resolve).transpose()?;

    let mut rows = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let row = i + 1;
        let Ok(record) = record else {
            rows.push(RawRow {
                row,
                id: None,
                text: None,
                label: None,
            });
            continue;
        };
        let label = record.get(label_col).map(|t| {
            let t = t.trim();
            let t = if cfg.strip_hashtag {
                t.strip_prefix('#').unwrap_or(t)
            } else {
                t
            };
            t.to_string()
        });
        let text = if label.is_some() {
            record.get(text_col).map(str::to_string)
        } else {
            None
        };
        rows.push(RawRow {
            row,
            id: id_col.and_then(|c| record.get(c)).map(str::to_string),
            text,
            label,
        });
    }
    Ok(rows)
}

/// SplitMix64: `state += 0x9E3779B97F4A7C15`, then the output is
/// `z ^ (z >> 31)` after `z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9` and
/// `z = (z ^ (z >> 27)) * 0x94D049BB133111EB`, all wrapping on 64 bits.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
}

/// Deterministic sample of `n` instances without replacement, in original
/// order.
///
/// Selection is a partial Fisher-Yates shuffle over positions `0..len`:
/// for `i` in `0..n`, swap position `i` with `i + next_u64() % (len - i)`.
/// The first `n` positions are then sorted ascending.
pub fn subsample(corpus: &Corpus, n: usize, seed: u64) -> Result<Corpus> {
    let len = corpus.len();
    if n == 0 || n > len {
        return Err(Error::SampleOutOfRange { n, len });
    }
    let mut positions: Vec<usize> = (0..len).collect();
    let mut rng = SplitMix64::new(seed);
    for i in 0..n {
        let j = i + (rng.next_u64() % (len - i) as u64) as usize;
        positions.swap(i, j);
    }
    let mut chosen = positions[..n].to_vec();
    chosen.sort_unstable();
    Ok(Corpus {
        name: corpus.name.clone(),
        instances: chosen
            .into_iter()
            .map(|i| corpus.instances[i].clone())
            .collect(),
        labels: corpus.labels.clone(),
    })
}

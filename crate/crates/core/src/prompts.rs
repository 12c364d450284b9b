//! Prompt generation.
//!
//! A prompt method pairs one [`PromptContext`] with a per-label list of
//! surface forms. Expanding a method for a label concatenates the context
//! with each surface form element-wise, so a label with six synonyms yields
//! six hypotheses.
//!
//! Surface forms for the built-in methods live in a tab-separated
//! representation table (`data/representations.tsv`) keyed by label and
//! context kind. The surface forms are already grammatically adapted for
//! their context, e.g. `joy` becomes `joyful` after "This person feels".

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::OnceLock;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::taxonomy::{EmotionLabel, LabelSet};
use crate::text;

const BUILTIN_TABLE: &str = include_str!("../data/representations.tsv");
const TABLE_HEADER: &str = "label\tcontext\trank\tsurface";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PromptContext {
    Empty,
    ExpressesText,
    FeelsPerson,
    ExpressesPerson,
}

impl PromptContext {
    pub const ALL: [PromptContext; 4] = [
        PromptContext::Empty,
        PromptContext::ExpressesText,
        PromptContext::FeelsPerson,
        PromptContext::ExpressesPerson,
    ];

    pub fn text(self) -> &'static str {
        match self {
            PromptContext::Empty => "",
            PromptContext::ExpressesText => "This text expresses",
            PromptContext::FeelsPerson => "This person feels",
            PromptContext::ExpressesPerson => "This person expresses",
        }
    }

    pub fn kind(self) -> &'static str {
        match self {
            PromptContext::Empty => "empty",
            PromptContext::ExpressesText => "expresses-text",
            PromptContext::FeelsPerson => "feels-person",
            PromptContext::ExpressesPerson => "expresses-person",
        }
    }

    /// Joins the context and a surface form into a hypothesis.
    pub fn hypothesis(self, surface: &str) -> String {
        match self {
            PromptContext::Empty => surface.to_string(),
            ctx => format!("{} {}", ctx.text(), surface),
        }
    }
}

impl fmt::Display for PromptContext {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.kind())
    }
}

impl FromStr for PromptContext {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PromptContext::ALL
            .into_iter()
            .find(|c| c.kind() == s)
            .ok_or_else(|| Error::Config(format!("unknown context kind `{s}`")))
    }
}

/// Surface forms per (label id, context kind), in rank order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RepresentationTable {
    entries: HashMap<(String, PromptContext), Vec<String>>,
}

impl RepresentationTable {
    /// The bundled table covering the eight built-in emotions.
    pub fn builtin() -> &'static RepresentationTable {
        static TABLE: OnceLock<RepresentationTable> = OnceLock::new();
        TABLE.get_or_init(|| {
            RepresentationTable::parse_tsv(BUILTIN_TABLE, "representations.tsv")
                .expect("bundled representation table is well-formed")
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::parse_tsv(&raw, &path.display().to_string())
    }

    /// Parses `label \t context-kind \t rank \t surface` rows. A leading
    /// header row and `#` comment lines are skipped. Ranks for each
    /// (label, context) must form the sequence 0..n.
    pub fn parse_tsv(raw: &str, source_name: &str) -> Result<Self> {
        let malformed = |line: usize, reason: String| Error::MalformedRecord {
            source_name: source_name.to_string(),
            line,
            reason,
        };
        let mut ranked: HashMap<(String, PromptContext), Vec<(usize, String)>> = HashMap::new();
        for (i, line) in raw.lines().enumerate() {
            let lineno = i + 1;
            if line.trim().is_empty() || line.starts_with('#') || (i == 0 && line == TABLE_HEADER) {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 4 {
                return Err(malformed(
                    lineno,
                    format!("expected 4 columns, got {}", cols.len()),
                ));
            }
            let label = EmotionLabel::new(cols[0]).map_err(|e| malformed(lineno, e.to_string()))?;
            let context: PromptContext = cols[1]
                .parse()
                .map_err(|e: Error| malformed(lineno, e.to_string()))?;
            let rank: usize = cols[2]
                .trim()
                .parse()
                .map_err(|_| malformed(lineno, format!("bad rank `{}`", cols[2])))?;
            let surface = text::clean(cols[3]);
            if surface.is_empty() {
                return Err(malformed(lineno, "empty surface form".into()));
            }
            ranked
                .entry((label.id().to_string(), context))
                .or_default()
                .push((rank, surface));
        }

        let mut entries = HashMap::with_capacity(ranked.len());
        for ((label, context), mut forms) in ranked {
            forms.sort_by_key(|(rank, _)| *rank);
            if forms.iter().enumerate().any(|(i, (rank, _))| *rank != i) {
                return Err(malformed(
                    0,
                    format!("ranks for {label}/{context} are not 0..{}", forms.len()),
                ));
            }
            entries.insert(
                (label, context),
                forms.into_iter().map(|(_, s)| s).collect(),
            );
        }
        Ok(Self { entries })
    }

    pub fn insert(&mut self, label: &str, context: PromptContext, surfaces: Vec<String>) {
        self.entries.insert((label.to_string(), context), surfaces);
    }

    pub fn surfaces(&self, label: &str, context: PromptContext) -> Result<&[String]> {
        self.entries
            .get(&(label.to_string(), context))
            .map(Vec::as_slice)
            .ok_or_else(|| Error::MissingRepresentation {
                label: label.to_string(),
                context: context.kind().to_string(),
            })
    }

    /// The stored, context-adapted surface form at `index`.
    pub fn surface_form(&self, label: &str, context: PromptContext, index: usize) -> Result<&str> {
        let forms = self.surfaces(label, context)?;
        forms
            .get(index)
            .map(String::as_str)
            .ok_or_else(|| Error::IndexOutOfRange {
                label: label.to_string(),
                context: context.kind().to_string(),
                index,
                len: forms.len(),
            })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Looks up a surface form in the bundled table.
pub fn surface_form(
    label: &EmotionLabel,
    context: PromptContext,
    index: usize,
) -> Result<&'static str> {
    RepresentationTable::builtin().surface_form(label.id(), context, index)
}

/// Where a method's surface forms came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MethodOrigin {
    Builtin,
    Lexicon,
    Custom,
}

/// How a built-in method reads its context's table entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Take {
    Head,
    All,
}

const BUILTINS: [(&str, PromptContext, Take); 7] = [
    ("emo-name", PromptContext::Empty, Take::Head),
    ("expr-emo", PromptContext::ExpressesText, Take::Head),
    ("feels-emo", PromptContext::FeelsPerson, Take::Head),
    ("wn-def", PromptContext::ExpressesPerson, Take::Head),
    ("emo-s", PromptContext::Empty, Take::All),
    ("expr-s", PromptContext::ExpressesText, Take::All),
    ("feels-s", PromptContext::FeelsPerson, Take::All),
];

/// Ids of the seven table-backed methods, in canonical order.
pub const BUILTIN_METHOD_IDS: [&str; 7] = [
    "emo-name",
    "expr-emo",
    "feels-emo",
    "wn-def",
    "emo-s",
    "expr-s",
    "feels-s",
];

/// Method id conventionally used for lexicon-backed prompts.
pub const LEXICON_METHOD_ID: &str = "emolex";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptMethod {
    id: String,
    context: PromptContext,
    origin: MethodOrigin,
    surfaces: IndexMap<String, Vec<String>>,
}

impl PromptMethod {
    /// Builds a method from explicit per-label surface lists. Every label
    /// in `labels` needs at least one surface form.
    pub fn from_surfaces(
        id: &str,
        context: PromptContext,
        origin: MethodOrigin,
        labels: &LabelSet,
        mut surfaces: HashMap<String, Vec<String>>,
    ) -> Result<Self> {
        let id = id.trim();
        if id.is_empty() {
            return Err(Error::Config("prompt method id is empty".into()));
        }
        let mut resolved = IndexMap::with_capacity(labels.len());
        for label in labels {
            let forms: Vec<String> = surfaces
                .remove(label.id())
                .unwrap_or_default()
                .iter()
                .map(|s| text::clean(s))
                .filter(|s| !s.is_empty())
                .collect();
            if forms.is_empty() {
                return Err(Error::MissingRepresentation {
                    label: label.id().to_string(),
                    context: context.kind().to_string(),
                });
            }
            resolved.insert(label.id().to_string(), forms);
        }
        Ok(Self {
            id: id.to_string(),
            context,
            origin,
            surfaces: resolved,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn context(&self) -> PromptContext {
        self.context
    }

    pub fn origin(&self) -> MethodOrigin {
        self.origin
    }

    /// Surface forms for `label`, or `None` when the label is not covered.
    pub fn surfaces(&self, label: &str) -> Option<&[String]> {
        self.surfaces.get(label).map(Vec::as_slice)
    }

    pub fn label_ids(&self) -> impl Iterator<Item = &str> {
        self.surfaces.keys().map(String::as_str)
    }

    /// Number of hypotheses the method generates per label, summed.
    pub fn variant_count(&self) -> usize {
        self.surfaces.values().map(Vec::len).sum()
    }

    pub fn expand(&self, label: &EmotionLabel) -> Result<Vec<PromptVariant>> {
        expand(self, label)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PromptVariant {
    pub label: EmotionLabel,
    pub hypothesis: String,
    pub method_id: String,
}

/// Builds one of the seven table-backed methods over the bundled table.
pub fn builtin_method(id: &str, labels: &LabelSet) -> Result<PromptMethod> {
    builtin_method_from(RepresentationTable::builtin(), id, labels)
}

pub fn builtin_method_from(
    table: &RepresentationTable,
    id: &str,
    labels: &LabelSet,
) -> Result<PromptMethod> {
    let (id, context, take) = BUILTINS
        .iter()
        .copied()
        .find(|(name, _, _)| *name == id)
        .ok_or_else(|| Error::UnknownMethod(id.to_string()))?;

    let mut surfaces = HashMap::with_capacity(labels.len());
    for label in labels {
        let forms = table.surfaces(label.id(), context)?;
        let forms = match take {
            Take::Head => forms[..1].to_vec(),
            Take::All => forms.to_vec(),
        };
        surfaces.insert(label.id().to_string(), forms);
    }
    PromptMethod::from_surfaces(id, context, MethodOrigin::Builtin, labels, surfaces)
}

pub fn is_builtin_method(id: &str) -> bool {
    BUILTIN_METHOD_IDS.contains(&id)
}

/// Element-wise concatenation of the method's context with each surface
/// form stored for `label`, in table order.
pub fn expand(method: &PromptMethod, label: &EmotionLabel) -> Result<Vec<PromptVariant>> {
    let forms = method
        .surfaces(label.id())
        .ok_or_else(|| Error::MissingRepresentation {
            label: label.id().to_string(),
            context: method.context.kind().to_string(),
        })?;
    Ok(forms
        .iter()
        .map(|surface| PromptVariant {
            label: label.clone(),
            hypothesis: method.context.hypothesis(surface),
            method_id: method.id.clone(),
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MethodSet {
    methods: Vec<PromptMethod>,
}

impl MethodSet {
    pub fn new(methods: Vec<PromptMethod>) -> Result<Self> {
        if methods.is_empty() {
            return Err(Error::EmptyMethodSet);
        }
        for (i, m) in methods.iter().enumerate() {
            if methods[..i].iter().any(|o| o.id == m.id) {
                return Err(Error::Duplicate(m.id.clone()));
            }
        }
        Ok(Self { methods })
    }

    pub fn iter(&self) -> std::slice::Iter<'_, PromptMethod> {
        self.methods.iter()
    }

    pub fn len(&self) -> usize {
        self.methods.len()
    }

    pub fn is_empty(&self) -> bool {
        self.methods.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&PromptMethod> {
        self.methods.iter().find(|m| m.id == id)
    }

    pub fn ids(&self) -> Vec<&str> {
        self.methods.iter().map(|m| m.id.as_str()).collect()
    }
}

impl<'a> IntoIterator for &'a MethodSet {
    type Item = &'a PromptMethod;
    type IntoIter = std::slice::Iter<'a, PromptMethod>;

    fn into_iter(self) -> Self::IntoIter {
        self.methods.iter()
    }
}

/// Declarative user-defined method, stored as TOML:
///
/// ```toml
/// id = "aesthetic"
/// context = "feels-person"
///
/// [surfaces]
/// beauty = ["beauty", "the beautiful"]
/// nostalgia = ["nostalgic"]
/// ```
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomMethodFile {
    pub id: String,
    pub context: PromptContext,
    pub surfaces: HashMap<String, Vec<String>>,
}

impl CustomMethodFile {
    pub fn parse(raw: &str, source_name: &str) -> Result<Self> {
        toml::from_str(raw).map_err(|e| Error::MalformedRecord {
            source_name: source_name.to_string(),
            line: 0,
            reason: e.message().to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::parse(&raw, &path.display().to_string())
    }

    pub fn into_method(self, labels: &LabelSet) -> Result<PromptMethod> {
        if is_builtin_method(&self.id) {
            return Err(Error::Duplicate(self.id));
        }
        PromptMethod::from_surfaces(
            &self.id,
            self.context,
            MethodOrigin::Custom,
            labels,
            self.surfaces,
        )
    }
}

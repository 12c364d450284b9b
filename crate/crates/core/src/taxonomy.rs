//! Emotion labels and ordered label sets.
//!
//! A [`LabelSet`] fixes the canonical index of every label. That index is
//! the tie-breaker for every argmax in the crate, so the order a label set
//! was built in is part of an experiment's identity.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The eight emotions covered by the bundled prompt tables, in table order.
pub const BUILTIN_LABELS: [&str; 8] = [
    "anger", "fear", "joy", "sadness", "disgust", "surprise", "guilt", "shame",
];

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EmotionLabel {
    id: String,
    display: String,
}

impl EmotionLabel {
    /// Creates a label whose display name equals its id.
    pub fn new(id: &str) -> Result<Self> {
        Self::with_display(id, id)
    }

    pub fn with_display(id: &str, display: &str) -> Result<Self> {
        let id = id.trim();
        if id.is_empty() {
            return Err(Error::InvalidLabel("empty label id".into()));
        }
        if id.chars().any(|c| c.is_uppercase()) {
            return Err(Error::InvalidLabel(format!(
                "label id `{id}` is not lowercase"
            )));
        }
        Ok(Self {
            id: id.to_string(),
            display: display.trim().to_string(),
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn display(&self) -> &str {
        &self.display
    }
}

impl fmt::Display for EmotionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.display)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelSet {
    labels: Vec<EmotionLabel>,
}

impl LabelSet {
    pub fn new(labels: Vec<EmotionLabel>) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::InvalidLabel("label set is empty".into()));
        }
        for (i, label) in labels.iter().enumerate() {
            if labels[..i].iter().any(|l| l.id == label.id) {
                return Err(Error::Duplicate(label.id.clone()));
            }
        }
        Ok(Self { labels })
    }

    pub fn from_ids<S: AsRef<str>>(ids: &[S]) -> Result<Self> {
        let labels = ids
            .iter()
            .map(|id| EmotionLabel::new(id.as_ref()))
            .collect::<Result<Vec<_>>>()?;
        Self::new(labels)
    }

    /// All eight built-in emotions.
    pub fn builtin() -> Self {
        Self::from_ids(&BUILTIN_LABELS).expect("builtin labels are valid")
    }

    /// The six Ekman emotions, in the built-in table order.
    pub fn ekman() -> Self {
        Self::from_ids(&["anger", "fear", "joy", "sadness", "disgust", "surprise"])
            .expect("ekman labels are valid")
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, EmotionLabel> {
        self.labels.iter()
    }

    pub fn get(&self, index: usize) -> Option<&EmotionLabel> {
        self.labels.get(index)
    }

    /// Canonical index of `id`.
    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.labels.iter().position(|l| l.id == id)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index_of(id).is_some()
    }

    pub fn label(&self, id: &str) -> Result<&EmotionLabel> {
        self.labels
            .iter()
            .find(|l| l.id == id)
            .ok_or_else(|| Error::UnknownLabel(id.to_string()))
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.labels.iter().map(|l| l.id.as_str())
    }
}

impl<'a> IntoIterator for &'a LabelSet {
    type Item = &'a EmotionLabel;
    type IntoIter = std::slice::Iter<'a, EmotionLabel>;

    fn into_iter(self) -> Self::IntoIter {
        self.labels.iter()
    }
}

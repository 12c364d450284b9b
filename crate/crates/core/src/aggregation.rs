//! Mean-entailment aggregation, argmax decisions, the prompt ensemble and
//! the oracle ensemble.
//!
//! For one instance, a method's score for a label is the mean entailment
//! probability over the method's hypotheses for that label. The ensemble
//! score is the equal-weight mean of method scores over the method set.
//! Decisions take the argmax over the label set; ties go to the label with
//! the lowest canonical index and are flagged on the prediction.

use std::fmt;
use std::io::{BufRead, Write};

use indexmap::IndexMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::taxonomy::LabelSet;

pub const ENSEMBLE_SOURCE: &str = "ensemble";
pub const ORACLE_SOURCE: &str = "oracle";

/// Entailment probabilities per (instance, method, label, variant).
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    labels: LabelSet,
    instance_ids: Vec<String>,
    method_ids: Vec<String>,
    /// `cells[instance][method][label]` holds the variant probabilities.
    cells: Vec<Vec<Vec<Vec<f64>>>>,
}

impl ScoreMatrix {
    pub fn new(
        labels: LabelSet,
        instance_ids: Vec<String>,
        method_ids: Vec<String>,
        cells: Vec<Vec<Vec<Vec<f64>>>>,
    ) -> Result<Self> {
        let incomplete = |msg: String| Error::IncompleteMatrix(msg);
        if cells.len() != instance_ids.len() {
            return Err(incomplete(format!(
                "{} instance rows for {} instances",
                cells.len(),
                instance_ids.len()
            )));
        }
        for (inst, row) in instance_ids.iter().zip(&cells) {
            if row.len() != method_ids.len() {
                return Err(incomplete(format!(
                    "instance `{inst}` has {} methods",
                    row.len()
                )));
            }
            for (method, per_label) in method_ids.iter().zip(row) {
                if per_label.len() != labels.len() {
                    return Err(incomplete(format!(
                        "instance `{inst}` method `{method}` covers {} of {} labels",
                        per_label.len(),
                        labels.len()
                    )));
                }
                for (label, probs) in labels.iter().zip(per_label) {
                    if probs.is_empty() {
                        return Err(incomplete(format!(
                            "no variants for `{inst}`/`{method}`/`{}`",
                            label.id()
                        )));
                    }
                    if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
                        return Err(Error::InvalidTriple(format!(
                            "probability outside [0,1] at `{inst}`/`{method}`/`{}`",
                            label.id()
                        )));
                    }
                }
            }
        }
        Ok(Self {
            labels,
            instance_ids,
            method_ids,
            cells,
        })
    }

    pub fn labels(&self) -> &LabelSet {
        &self.labels
    }

    pub fn instance_ids(&self) -> &[String] {
        &self.instance_ids
    }

    pub fn method_ids(&self) -> &[String] {
        &self.method_ids
    }

    pub fn variants(&self, instance: usize, method: usize, label: usize) -> &[f64] {
        &self.cells[instance][method][label]
    }

    pub fn method_index(&self, id: &str) -> Option<usize> {
        self.method_ids.iter().position(|m| m == id)
    }

    /// Per-label means for one (instance, method) cell.
    pub fn method_score(&self, instance: usize, method: usize) -> MethodScore {
        let scores = self
            .labels
            .iter()
            .zip(&self.cells[instance][method])
            .map(|(label, probs)| {
                (
                    label.id().to_string(),
                    method_score(probs).expect("matrix cells are nonempty"),
                )
            })
            .collect();
        MethodScore {
            instance_id: self.instance_ids[instance].clone(),
            method_id: self.method_ids[method].clone(),
            scores,
        }
    }

    /// Writes one JSON object per (instance, method) cell.
    pub fn write_jsonl<W: Write>(&self, mut out: W, extra: Option<(&str, &str)>) -> Result<()> {
        for (i, inst) in self.instance_ids.iter().enumerate() {
            for (m, method) in self.method_ids.iter().enumerate() {
                let mut obj = serde_json::Map::new();
                if let Some((k, v)) = extra {
                    obj.insert(k.into(), v.into());
                }
                obj.insert("instance_id".into(), inst.as_str().into());
                obj.insert("method_id".into(), method.as_str().into());
                let scores: serde_json::Map<String, serde_json::Value> = self
                    .labels
                    .iter()
                    .zip(&self.cells[i][m])
                    .map(|(l, probs)| (l.id().to_string(), serde_json::json!(probs)))
                    .collect();
                obj.insert("scores".into(), scores.into());
                writeln!(out, "{}", serde_json::Value::Object(obj))
                    .map_err(|e| Error::io("writing score matrix", e))?;
            }
        }
        Ok(())
    }

    /// Reads cells written by [`ScoreMatrix::write_jsonl`]. Instance and
    /// method order follow first appearance.
    pub fn read_jsonl<R: BufRead>(reader: R, labels: LabelSet) -> Result<Self> {
        #[derive(Deserialize)]
        struct Cell {
            instance_id: String,
            method_id: String,
            scores: IndexMap<String, Vec<f64>>,
        }

        let mut instances: IndexMap<String, IndexMap<String, Vec<Vec<f64>>>> = IndexMap::new();
        let mut methods: IndexMap<String, ()> = IndexMap::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::io("reading score matrix", e))?;
            if line.trim().is_empty() {
                continue;
            }
            let cell: Cell = serde_json::from_str(&line).map_err(|e| Error::MalformedRecord {
                source_name: "score matrix".into(),
                line: i + 1,
                reason: e.to_string(),
            })?;
            let mut per_label = Vec::with_capacity(labels.len());
            for label in &labels {
                let probs = cell.scores.get(label.id()).cloned().ok_or_else(|| {
                    Error::IncompleteMatrix(format!(
                        "line {}: no scores for label `{}`",
                        i + 1,
                        label.id()
                    ))
                })?;
                per_label.push(probs);
            }
            methods.insert(cell.method_id.clone(), ());
            instances
                .entry(cell.instance_id)
                .or_default()
                .insert(cell.method_id, per_label);
        }

        let method_ids: Vec<String> = methods.into_keys().collect();
        let mut instance_ids = Vec::with_capacity(instances.len());
        let mut cells = Vec::with_capacity(instances.len());
        for (inst, mut by_method) in instances {
            let mut row = Vec::with_capacity(method_ids.len());
            for m in &method_ids {
                row.push(by_method.swap_remove(m).ok_or_else(|| {
                    Error::IncompleteMatrix(format!("instance `{inst}` lacks method `{m}`"))
                })?);
            }
            instance_ids.push(inst);
            cells.push(row);
        }
        Self::new(labels, instance_ids, method_ids, cells)
    }
}

/// Per-label mean entailment of one method on one instance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodScore {
    pub instance_id: String,
    pub method_id: String,
    pub scores: IndexMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum PredictionSource {
    Method(String),
    Ensemble,
    Oracle,
}

impl PredictionSource {
    pub fn as_str(&self) -> &str {
        match self {
            PredictionSource::Method(id) => id,
            PredictionSource::Ensemble => ENSEMBLE_SOURCE,
            PredictionSource::Oracle => ORACLE_SOURCE,
        }
    }
}

impl fmt::Display for PredictionSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Serialize for PredictionSource {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for PredictionSource {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Ok(match s.as_str() {
            ENSEMBLE_SOURCE => PredictionSource::Ensemble,
            ORACLE_SOURCE => PredictionSource::Oracle,
            _ => PredictionSource::Method(s),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub instance_id: String,
    pub source: PredictionSource,
    pub label: String,
    pub score: f64,
    /// More than one label reached the winning score.
    #[serde(default)]
    pub tied: bool,
}

/// Arithmetic mean of the variant probabilities, summed in input order.
pub fn method_score(variant_probs: &[f64]) -> Result<f64> {
    if variant_probs.is_empty() {
        return Err(Error::EmptyVariants);
    }
    let sum: f64 = variant_probs.iter().sum();
    Ok(sum / variant_probs.len() as f64)
}

/// Index of the first maximum and whether the maximum is shared.
fn argmax(values: &[f64]) -> (usize, bool) {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    let tied = values.iter().filter(|v| **v == values[best]).count() > 1;
    (best, tied)
}

fn aligned(scores: &MethodScore, labels: &LabelSet) -> Result<Vec<f64>> {
    labels
        .iter()
        .map(|l| {
            scores.scores.get(l.id()).copied().ok_or_else(|| {
                Error::IncompleteMatrix(format!(
                    "`{}`/`{}` has no score for label `{}`",
                    scores.instance_id,
                    scores.method_id,
                    l.id()
                ))
            })
        })
        .collect()
}

fn decide(
    instance_id: &str,
    source: PredictionSource,
    values: &[f64],
    labels: &LabelSet,
) -> Prediction {
    let (best, tied) = argmax(values);
    Prediction {
        instance_id: instance_id.to_string(),
        source,
        label: labels
            .get(best)
            .expect("argmax within label set")
            .id()
            .to_string(),
        score: values[best],
        tied,
    }
}

/// Argmax over `labels` of one method's scores.
pub fn classify_method(scores: &MethodScore, labels: &LabelSet) -> Result<Prediction> {
    let values = aligned(scores, labels)?;
    Ok(decide(
        &scores.instance_id,
        PredictionSource::Method(scores.method_id.clone()),
        &values,
        labels,
    ))
}

fn check_same_instance(method_scores: &[MethodScore]) -> Result<&str> {
    let first = method_scores.first().ok_or(Error::EmptyMethodSet)?;
    if let Some(other) = method_scores
        .iter()
        .find(|m| m.instance_id != first.instance_id)
    {
        return Err(Error::InconsistentInstances {
            expected: first.instance_id.clone(),
            found: other.instance_id.clone(),
        });
    }
    Ok(&first.instance_id)
}

/// Equal-weight mean of the method scores for `label`.
pub fn ensemble_score(method_scores: &[MethodScore], label: &str) -> Result<f64> {
    check_same_instance(method_scores)?;
    let mut sum = 0.0;
    for m in method_scores {
        sum += m.scores.get(label).copied().ok_or_else(|| {
            Error::IncompleteMatrix(format!(
                "`{}` has no score for label `{label}`",
                m.method_id
            ))
        })?;
    }
    Ok(sum / method_scores.len() as f64)
}

/// Ensemble means for every label, in label order.
pub fn ensemble_scores(method_scores: &[MethodScore], labels: &LabelSet) -> Result<MethodScore> {
    let instance_id = check_same_instance(method_scores)?.to_string();
    let scores = labels
        .iter()
        .map(|l| Ok((l.id().to_string(), ensemble_score(method_scores, l.id())?)))
        .collect::<Result<_>>()?;
    Ok(MethodScore {
        instance_id,
        method_id: ENSEMBLE_SOURCE.to_string(),
        scores,
    })
}

pub fn classify_ensemble(method_scores: &[MethodScore], labels: &LabelSet) -> Result<Prediction> {
    let ens = ensemble_scores(method_scores, labels)?;
    let values = aligned(&ens, labels)?;
    Ok(decide(
        &ens.instance_id,
        PredictionSource::Ensemble,
        &values,
        labels,
    ))
}

/// Gold if any component predicted it, otherwise `fallback`'s label.
/// The result is always marked as coming from the oracle.
pub fn oracle_predict(
    component_preds: &IndexMap<String, Prediction>,
    gold: &str,
    fallback: &Prediction,
) -> Prediction {
    match component_preds.values().find(|p| p.label == gold) {
        Some(hit) => Prediction {
            instance_id: hit.instance_id.clone(),
            source: PredictionSource::Oracle,
            label: gold.to_string(),
            score: hit.score,
            tied: false,
        },
        None => Prediction {
            source: PredictionSource::Oracle,
            ..fallback.clone()
        },
    }
}

pub fn write_predictions<W: Write>(
    preds: &[Prediction],
    mut out: W,
    extra: Option<(&str, &str)>,
) -> Result<()> {
    for p in preds {
        let mut value = serde_json::to_value(p).expect("prediction serializes");
        if let (Some((k, v)), serde_json::Value::Object(obj)) = (extra, &mut value) {
            obj.insert(k.into(), v.into());
        }
        writeln!(out, "{value}").map_err(|e| Error::io("writing predictions", e))?;
    }
    Ok(())
}

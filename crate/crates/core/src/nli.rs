//! Entailment scoring.
//!
//! A backend maps (premise, hypothesis) pairs to 3-way NLI distributions.
//! [`score_pairs`] drives any backend in fixed-size batches, optionally with
//! several batches in flight, and always returns triples aligned with the
//! input order. [`entailment_prob`] turns a triple into the single
//! probability the aggregation step averages.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Allowed deviation of a triple's sum from 1.
pub const SUM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub premise: String,
    pub hypothesis: String,
}

impl ScoreRequest {
    pub fn new(premise: impl Into<String>, hypothesis: impl Into<String>) -> Self {
        Self {
            premise: premise.into(),
            hypothesis: hypothesis.into(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.premise.is_empty() || self.hypothesis.is_empty() {
            return Err(Error::InvalidRequest(
                "premise and hypothesis must be nonempty".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreTriple {
    pub entailment: f64,
    pub neutral: f64,
    pub contradiction: f64,
}

impl ScoreTriple {
    pub fn new(entailment: f64, neutral: f64, contradiction: f64) -> Result<Self> {
        let triple = Self {
            entailment,
            neutral,
            contradiction,
        };
        triple.validate()?;
        Ok(triple)
    }

    pub fn validate(&self) -> Result<()> {
        let parts = [self.entailment, self.neutral, self.contradiction];
        if parts.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::InvalidTriple(format!(
                "component out of [0,1]: {self:?}"
            )));
        }
        let sum: f64 = parts.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::InvalidTriple(format!("components sum to {sum}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoringMode {
    /// Entailment component of the full 3-class distribution.
    #[default]
    ThreeWay,
    /// Entailment renormalized over {entailment, contradiction}.
    Binary,
}

impl ScoringMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ScoringMode::ThreeWay => "three-way",
            ScoringMode::Binary => "binary",
        }
    }
}

impl fmt::Display for ScoringMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScoringMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "three-way" => Ok(ScoringMode::ThreeWay),
            "binary" => Ok(ScoringMode::Binary),
            other => Err(Error::Config(format!("unknown scoring mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Extracted {
    pub value: f64,
    /// Binary mode with entailment + contradiction = 0; `value` is 0.5.
    pub degenerate: bool,
}

pub fn entailment_prob(triple: &ScoreTriple, mode: ScoringMode) -> Extracted {
    match mode {
        ScoringMode::ThreeWay => Extracted {
            value: triple.entailment,
            degenerate: false,
        },
        ScoringMode::Binary => {
            let denom = triple.entailment + triple.contradiction;
            if denom > 0.0 {
                Extracted {
                    value: (triple.entailment / denom).clamp(0.0, 1.0),
                    degenerate: false,
                }
            } else {
                Extracted {
                    value: 0.5,
                    degenerate: true,
                }
            }
        }
    }
}

/// Identity of the NLI model behind a backend.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendModel {
    pub model_id: String,
    pub endpoint: BackendEndpoint,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackendEndpoint {
    Mock,
    Remote(String),
}

pub trait NliBackend: Send + Sync {
    fn model_id(&self) -> &str;

    /// Scores one batch. The result must be aligned with `batch`.
    fn score_batch(&self, batch: &[ScoreRequest]) -> Result<Vec<ScoreTriple>>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchOptions {
    pub batch_size: usize,
    /// Maximum number of batches scored concurrently.
    pub in_flight: usize,
}

impl BatchOptions {
    pub fn new(batch_size: usize) -> Self {
        Self {
            batch_size,
            in_flight: 1,
        }
    }

    pub fn with_in_flight(mut self, in_flight: usize) -> Self {
        self.in_flight = in_flight;
        self
    }
}

impl Default for BatchOptions {
    fn default() -> Self {
        Self::new(32)
    }
}

/// Scores `requests` in batches of `options.batch_size`. Output is aligned
/// with `requests` and does not depend on the batch size or on how many
/// batches were in flight. The first failing batch fails the whole call.
pub fn score_pairs(
    backend: &dyn NliBackend,
    requests: &[ScoreRequest],
    options: BatchOptions,
) -> Result<Vec<ScoreTriple>> {
    if requests.is_empty() {
        return Err(Error::InvalidRequest("no requests to score".into()));
    }
    if options.batch_size == 0 {
        return Err(Error::Config("batch size must be at least 1".into()));
    }
    for r in requests {
        r.validate()?;
    }

    let batches: Vec<&[ScoreRequest]> = requests.chunks(options.batch_size).collect();
    let score_one = |batch: &[ScoreRequest]| -> Result<Vec<ScoreTriple>> {
        let triples = backend.score_batch(batch)?;
        if triples.len() != batch.len() {
            return Err(Error::Protocol(format!(
                "backend returned {} scores for {} pairs",
                triples.len(),
                batch.len()
            )));
        }
        for t in &triples {
            t.validate()?;
        }
        Ok(triples)
    };

    let workers = options.in_flight.clamp(1, batches.len());
    if workers == 1 {
        let mut out = Vec::with_capacity(requests.len());
        for batch in batches {
            out.extend(score_one(batch)?);
        }
        return Ok(out);
    }

    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Vec<ScoreTriple>>>> = Mutex::new(vec![None; batches.len()]);
    let failure: Mutex<Option<(usize, Error)>> = Mutex::new(None);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                if failure.lock().expect("lock poisoned").is_some() {
                    break;
                }
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(batch) = batches.get(i) else { break };
                match score_one(batch) {
                    Ok(triples) => slots.lock().expect("lock poisoned")[i] = Some(triples),
                    Err(e) => {
                        let mut f = failure.lock().expect("lock poisoned");
                        // keep the earliest failing batch for a stable error
                        if f.as_ref().is_none_or(|(j, _)| i < *j) {
                            *f = Some((i, e));
                        }
                        break;
                    }
                }
            });
        }
    });

    if let Some((_, e)) = failure.into_inner().expect("lock poisoned") {
        return Err(e);
    }
    Ok(slots
        .into_inner()
        .expect("lock poisoned")
        .into_iter()
        .flat_map(|s| s.expect("every batch scored"))
        .collect())
}

const FNV_OFFSET: u64 = 14_695_981_039_346_656_037;
const FNV_PRIME: u64 = 1_099_511_628_211;

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |h, b| {
        (h ^ u64::from(*b)).wrapping_mul(FNV_PRIME)
    })
}

/// Deterministic pseudo-score for a pair.
///
/// Unless overridden, the FNV-1a 64 hash of `premise 0x1F hypothesis` is
/// split into three 21-bit fields (bits 0-20 entailment, 21-41 neutral,
/// 42-62 contradiction); each field plus one is normalized by their sum.
pub fn mock_score(
    premise: &str,
    hypothesis: &str,
    overrides: &HashMap<(String, String), ScoreTriple>,
) -> ScoreTriple {
    if let Some(t) = overrides.get(&(premise.to_string(), hypothesis.to_string())) {
        return *t;
    }
    let mut bytes = Vec::with_capacity(premise.len() + hypothesis.len() + 1);
    bytes.extend_from_slice(premise.as_bytes());
    bytes.push(0x1F);
    bytes.extend_from_slice(hypothesis.as_bytes());
    let h = fnv1a64(&bytes);
    const MASK: u64 = (1 << 21) - 1;
    let e = ((h & MASK) + 1) as f64;
    let n = (((h >> 21) & MASK) + 1) as f64;
    let c = (((h >> 42) & MASK) + 1) as f64;
    let sum = e + n + c;
    ScoreTriple {
        entailment: e / sum,
        neutral: n / sum,
        contradiction: c / sum,
    }
}

/// In-process backend returning [`mock_score`] values. Counts every pair
/// and batch it receives.
#[derive(Debug, Default)]
pub struct MockBackend {
    model_id: String,
    overrides: HashMap<(String, String), ScoreTriple>,
    requests: AtomicUsize,
    batches: AtomicUsize,
}

impl MockBackend {
    pub fn new(model_id: &str) -> Self {
        Self {
            model_id: model_id.to_string(),
            ..Self::default()
        }
    }

    pub fn with_overrides(mut self, overrides: HashMap<(String, String), ScoreTriple>) -> Self {
        self.overrides = overrides;
        self
    }

    pub fn request_count(&self) -> usize {
        self.requests.load(Ordering::SeqCst)
    }

    pub fn batch_count(&self) -> usize {
        self.batches.load(Ordering::SeqCst)
    }
}

impl NliBackend for MockBackend {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn score_batch(&self, batch: &[ScoreRequest]) -> Result<Vec<ScoreTriple>> {
        self.batches.fetch_add(1, Ordering::SeqCst);
        self.requests.fetch_add(batch.len(), Ordering::SeqCst);
        Ok(batch
            .iter()
            .map(|r| mock_score(&r.premise, &r.hypothesis, &self.overrides))
            .collect())
    }
}

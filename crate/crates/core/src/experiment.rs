//! Experiment configuration and the `expand`, `run` and `cache` commands.
//!
//! A [`RunConfig`] is read from TOML, optionally overridden by flags, then
//! validated before any backend call. Its canonical JSON serialization is
//! hashed; the hash names the run directory and is embedded in every output
//! file.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::aggregation::{
    classify_ensemble, classify_method, oracle_predict, write_predictions, Prediction,
    PredictionSource, ScoreMatrix, ENSEMBLE_SOURCE, ORACLE_SOURCE,
};
use crate::cache::{self, cached_score_pairs, ScoreStore};
use crate::corpus::{
    load_corpus, subsample, CorpusFormat, DelimitedConfig, LabelMapping, LoadOptions,
};
use crate::error::{Error, Result};
use crate::evaluation::{
    confusion, render_plot_data, render_report, Report, ReportFormat, RunMetadata, SourceMetrics,
};
use crate::lexicon::{load_lexicon_method, read_lexicon};
use crate::nli::{
    entailment_prob, score_pairs, BatchOptions, MockBackend, NliBackend, ScoreRequest, ScoringMode,
};
use crate::prompts::{
    builtin_method_from, is_builtin_method, CustomMethodFile, MethodOrigin, MethodSet,
    PromptMethod, RepresentationTable, BUILTIN_METHOD_IDS, LEXICON_METHOD_ID,
};
use crate::remote::{RemoteBackend, RetryPolicy, ENDPOINT_ENV};
use crate::taxonomy::{LabelSet, BUILTIN_LABELS};

pub const CONFIG_FILE: &str = "config.json";
pub const SCORES_FILE: &str = "scores.jsonl";
pub const PREDICTIONS_FILE: &str = "predictions.jsonl";
pub const PLOT_FILE: &str = "plotdata.csv";
pub const DEFAULT_MOCK_MODEL: &str = "mock-nli";

const ORACLE_FALLBACK_RULE: &str = "ensemble prediction when no component predicts gold";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorpusFormatKind {
    #[default]
    Jsonl,
    Delimited,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSpec {
    /// Defaults to the file stem of `path`.
    #[serde(default)]
    pub name: Option<String>,
    pub path: PathBuf,
    #[serde(default)]
    pub format: CorpusFormatKind,
    #[serde(default)]
    pub delimited: Option<DelimitedConfig>,
    /// Source label token → label id, or `DISCARD`. Label ids map to
    /// themselves without an entry.
    #[serde(default)]
    pub mapping: IndexMap<String, String>,
    #[serde(default)]
    pub skip_malformed: bool,
}

impl CorpusSpec {
    pub fn display_name(&self) -> String {
        self.name.clone().unwrap_or_else(|| {
            self.path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "corpus".into())
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackendKind {
    #[default]
    Mock,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendSpec {
    #[serde(default)]
    pub kind: BackendKind,
    /// Falls back to the `ZSL_EMOTION_ENDPOINT` environment variable.
    #[serde(default)]
    pub endpoint: Option<String>,
    #[serde(default = "default_model")]
    pub model_id: String,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
}

impl Default for BackendSpec {
    fn default() -> Self {
        Self {
            kind: BackendKind::Mock,
            endpoint: None,
            model_id: default_model(),
            timeout_secs: default_timeout(),
            max_retries: default_retries(),
        }
    }
}

fn default_model() -> String {
    DEFAULT_MOCK_MODEL.into()
}

fn default_timeout() -> u64 {
    120
}

fn default_retries() -> u32 {
    RetryPolicy::default().max_retries
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleSpec {
    pub n: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LexiconSpec {
    pub path: PathBuf,
    #[serde(default = "default_lexicon_id")]
    pub id: String,
    /// Lexicon category → label id.
    pub category_map: IndexMap<String, String>,
}

fn default_lexicon_id() -> String {
    LEXICON_METHOD_ID.into()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub corpus: Option<CorpusSpec>,
    #[serde(default = "default_labels")]
    pub labels: Vec<String>,
    /// Defaults to the seven table-backed methods.
    #[serde(default = "default_methods")]
    pub methods: Vec<String>,
    #[serde(default)]
    pub ensemble: bool,
    /// Ensemble members; defaults to every configured non-lexicon method.
    #[serde(default)]
    pub ensemble_methods: Option<Vec<String>>,
    #[serde(default)]
    pub oracle: bool,
    #[serde(default)]
    pub backend: BackendSpec,
    #[serde(default)]
    pub mode: ScoringMode,
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_in_flight")]
    pub in_flight: usize,
    #[serde(default)]
    pub sample: Option<SampleSpec>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub representation_table: Option<PathBuf>,
    #[serde(default)]
    pub lexicon: Option<LexiconSpec>,
    #[serde(default)]
    pub custom_methods: Vec<PathBuf>,
}

fn default_labels() -> Vec<String> {
    BUILTIN_LABELS.iter().map(|s| s.to_string()).collect()
}

fn default_methods() -> Vec<String> {
    BUILTIN_METHOD_IDS.iter().map(|s| s.to_string()).collect()
}

fn default_batch_size() -> usize {
    32
}

fn default_in_flight() -> usize {
    1
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            corpus: None,
            labels: default_labels(),
            methods: default_methods(),
            ensemble: false,
            ensemble_methods: None,
            oracle: false,
            backend: BackendSpec::default(),
            mode: ScoringMode::default(),
            cache_dir: None,
            batch_size: default_batch_size(),
            in_flight: default_in_flight(),
            sample: None,
            output_dir: default_output_dir(),
            representation_table: None,
            lexicon: None,
            custom_methods: vec![],
        }
    }
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl RunConfig {
    /// Parses TOML; relative paths are resolved against `base_dir`.
    pub fn from_toml(raw: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: RunConfig =
            toml::from_str(raw).map_err(|e| Error::Config(e.message().to_string()))?;
        if let Some(c) = &mut cfg.corpus {
            resolve(base_dir, &mut c.path);
        }
        if let Some(d) = &mut cfg.cache_dir {
            resolve(base_dir, d);
        }
        resolve(base_dir, &mut cfg.output_dir);
        if let Some(t) = &mut cfg.representation_table {
            resolve(base_dir, t);
        }
        if let Some(l) = &mut cfg.lexicon {
            resolve(base_dir, &mut l.path);
        }
        for p in &mut cfg.custom_methods {
            resolve(base_dir, p);
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let raw = fs::read_to_string(path).map_err(|e| Error::ConfigFile {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&raw, base).map_err(|e| Error::ConfigFile {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
    }

    /// Canonical JSON: object keys sorted, no insignificant whitespace.
    pub fn canonical_json(&self) -> String {
        serde_json::to_value(self)
            .expect("config serializes")
            .to_string()
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_json().as_bytes()))
    }

    pub fn label_set(&self) -> Result<LabelSet> {
        LabelSet::from_ids(&self.labels)
    }

    /// Resolves every configured method id against the built-in table, the
    /// lexicon and custom method files, in configured order.
    pub fn method_set(&self, labels: &LabelSet) -> Result<MethodSet> {
        if self.methods.is_empty() {
            return Err(Error::EmptyMethodSet);
        }
        for id in &self.methods {
            if id == ENSEMBLE_SOURCE || id == ORACLE_SOURCE {
                return Err(Error::Config(format!(
                    "`{id}` is reserved and cannot name a method"
                )));
            }
        }
        let loaded_table;
        let table = match &self.representation_table {
            Some(path) => {
                loaded_table = RepresentationTable::load(path)?;
                &loaded_table
            }
            None => RepresentationTable::builtin(),
        };

        let mut custom: HashMap<String, PromptMethod> = HashMap::new();
        for path in &self.custom_methods {
            let method = CustomMethodFile::load(path)?.into_method(labels)?;
            if custom.contains_key(method.id()) {
                return Err(Error::Duplicate(method.id().to_string()));
            }
            custom.insert(method.id().to_string(), method);
        }

        let mut methods = Vec::with_capacity(self.methods.len());
        for id in &self.methods {
            let method = if is_builtin_method(id) {
                builtin_method_from(table, id, labels)?
            } else if let Some(lex) = self.lexicon.as_ref().filter(|l| &l.id == id) {
                let records = read_lexicon(&lex.path)?;
                let map: HashMap<String, String> = lex.category_map.clone().into_iter().collect();
                load_lexicon_method(id, &records, &map, labels)?
            } else if let Some(m) = custom.remove(id) {
                m
            } else {
                return Err(Error::UnknownMethod(id.clone()));
            };
            methods.push(method);
        }
        MethodSet::new(methods)
    }

    /// Members of the ensemble (and the oracle's components).
    pub fn ensemble_members(&self, methods: &MethodSet) -> Result<Vec<String>> {
        let members: Vec<String> = match &self.ensemble_methods {
            Some(ids) => {
                for id in ids {
                    if methods.get(id).is_none() {
                        return Err(Error::Config(format!(
                            "ensemble member `{id}` is not among the configured methods"
                        )));
                    }
                }
                ids.clone()
            }
            None => methods
                .iter()
                .filter(|m| m.origin() != MethodOrigin::Lexicon)
                .map(|m| m.id().to_string())
                .collect(),
        };
        if members.is_empty() {
            return Err(Error::Config("ensemble has no members".into()));
        }
        let unique: HashSet<&String> = members.iter().collect();
        if unique.len() != members.len() {
            return Err(Error::Config("duplicate ensemble member".into()));
        }
        Ok(members)
    }

    fn validate_run(&self) -> Result<&CorpusSpec> {
        let corpus = self
            .corpus
            .as_ref()
            .ok_or_else(|| Error::Config("no corpus configured".into()))?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.in_flight == 0 {
            return Err(Error::Config("in_flight must be positive".into()));
        }
        if corpus.format == CorpusFormatKind::Delimited && corpus.delimited.is_none() {
            return Err(Error::Config(
                "delimited corpus needs a [corpus.delimited] table".into(),
            ));
        }
        if self.backend.kind == BackendKind::Remote && self.endpoint().is_none() {
            return Err(Error::Config(format!(
                "remote backend needs an endpoint (config or {ENDPOINT_ENV})"
            )));
        }
        if !corpus.path.is_file() {
            return Err(Error::Config(format!(
                "corpus file {} not found",
                corpus.path.display()
            )));
        }
        Ok(corpus)
    }

    fn endpoint(&self) -> Option<String> {
        self.backend
            .endpoint
            .clone()
            .or_else(|| std::env::var(ENDPOINT_ENV).ok().filter(|s| !s.is_empty()))
    }

    fn build_backend(&self) -> Result<Box<dyn NliBackend>> {
        match self.backend.kind {
            BackendKind::Mock => Ok(Box::new(MockBackend::new(&self.backend.model_id))),
            BackendKind::Remote => {
                let endpoint = self.endpoint().expect("validated");
                let retry = RetryPolicy {
                    max_retries: self.backend.max_retries,
                    ..RetryPolicy::default()
                };
                let timeout = Duration::from_secs(self.backend.timeout_secs);
                Ok(Box::new(RemoteBackend::connect(
                    &endpoint,
                    &self.backend.model_id,
                    retry,
                    timeout,
                )?))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ExpandFormat {
    /// `# method / label` headers followed by one hypothesis per line.
    #[default]
    Grouped,
    /// `method\tlabel\thypothesis` rows.
    Tsv,
}

/// Every prompt variant, grouped by method then label.
pub fn cmd_expand(config: &RunConfig, format: ExpandFormat) -> Result<String> {
    let labels = config.label_set()?;
    let methods = config.method_set(&labels)?;
    let mut out = String::new();
    for method in &methods {
        for label in &labels {
            let variants = method.expand(label)?;
            if format == ExpandFormat::Grouped {
                let _ = writeln!(out, "# {} / {}", method.id(), label.id());
            }
            for v in variants {
                match format {
                    ExpandFormat::Grouped => {
                        let _ = writeln!(out, "{}", v.hypothesis);
                    }
                    ExpandFormat::Tsv => {
                        let _ = writeln!(out, "{}\t{}\t{}", method.id(), label.id(), v.hypothesis);
                    }
                }
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub run_dir: PathBuf,
    pub config_hash: String,
    pub instances: usize,
    /// Unique (premise, hypothesis) pairs needed by the run.
    pub unique_pairs: usize,
    /// Pairs actually sent to the backend.
    pub backend_requests: usize,
    pub cache_hits: usize,
    pub report: Report,
}

/// Scores a corpus with every configured method and writes the run
/// directory `<output_dir>/run-<corpus>-<hash12>`.
pub fn cmd_run(config: &RunConfig) -> Result<RunSummary> {
    config.validate_run()?;
    let backend = config.build_backend()?;
    run_with_backend(config, backend.as_ref())
}

/// [`cmd_run`] against a caller-supplied backend.
pub fn run_with_backend(config: &RunConfig, backend: &dyn NliBackend) -> Result<RunSummary> {
    let corpus_spec = config.validate_run()?;
    let hash = config.hash();
    let labels = config.label_set()?;
    let methods = config.method_set(&labels)?;
    let members = if config.ensemble || config.oracle {
        config.ensemble_members(&methods)?
    } else {
        vec![]
    };

    let corpus_name = corpus_spec.display_name();
    let format = match corpus_spec.format {
        CorpusFormatKind::Jsonl => CorpusFormat::Jsonl,
        CorpusFormatKind::Delimited => {
            CorpusFormat::Delimited(corpus_spec.delimited.clone().expect("validated"))
        }
    };
    let mapping = LabelMapping::identity(&labels).with(corpus_spec.mapping.clone());
    let (corpus, stats) = load_corpus(
        &corpus_spec.path,
        &corpus_name,
        &format,
        &mapping,
        &labels,
        LoadOptions {
            skip_malformed: corpus_spec.skip_malformed,
        },
    )?;
    let corpus = match config.sample {
        Some(s) => subsample(&corpus, s.n, s.seed)?,
        None => corpus,
    };
    if config.oracle && !corpus.all_gold() {
        return Err(Error::Config(
            "oracle requires gold labels on every instance".into(),
        ));
    }

    // Expand once per method and label; hypotheses are shared by instances.
    let expanded: Vec<Vec<Vec<String>>> = methods
        .iter()
        .map(|m| {
            labels
                .iter()
                .map(|l| Ok(m.expand(l)?.into_iter().map(|v| v.hypothesis).collect()))
                .collect::<Result<_>>()
        })
        .collect::<Result<_>>()?;

    let mut unique: IndexMap<ScoreRequest, ()> = IndexMap::new();
    for inst in &corpus.instances {
        for per_label in &expanded {
            for hyps in per_label {
                for h in hyps {
                    unique.insert(ScoreRequest::new(inst.text.as_str(), h.as_str()), ());
                }
            }
        }
    }
    let requests: Vec<ScoreRequest> = unique.keys().cloned().collect();
    log::info!(
        "{} instances, {} methods, {} unique pairs",
        corpus.len(),
        methods.len(),
        requests.len()
    );

    let options = BatchOptions::new(config.batch_size).with_in_flight(config.in_flight);
    let (triples, backend_requests, cache_hits) = match &config.cache_dir {
        Some(dir) => {
            let store = ScoreStore::open(dir)?;
            let scored = cached_score_pairs(&store, backend, config.mode, &requests, options)?;
            (scored.triples, scored.backend_requests, scored.hits)
        }
        None => (score_pairs(backend, &requests, options)?, requests.len(), 0),
    };

    let mut degenerate = 0u64;
    let probs: Vec<f64> = triples
        .iter()
        .map(|t| {
            let x = entailment_prob(t, config.mode);
            degenerate += x.degenerate as u64;
            x.value
        })
        .collect();

    let cells = corpus
        .instances
        .iter()
        .map(|inst| {
            expanded
                .iter()
                .map(|per_label| {
                    per_label
                        .iter()
                        .map(|hyps| {
                            hyps.iter()
                                .map(|h| {
                                    let key = ScoreRequest::new(inst.text.as_str(), h.as_str());
                                    probs[unique.get_index_of(&key).expect("pair was scored")]
                                })
                                .collect()
                        })
                        .collect()
                })
                .collect()
        })
        .collect();
    let matrix = ScoreMatrix::new(
        labels.clone(),
        corpus.instances.iter().map(|i| i.id.clone()).collect(),
        methods.ids().iter().map(|s| s.to_string()).collect(),
        cells,
    )?;

    let mut predictions: Vec<Prediction> = Vec::new();
    for (i, inst) in corpus.instances.iter().enumerate() {
        let scores: Vec<_> = (0..methods.len())
            .map(|m| matrix.method_score(i, m))
            .collect();
        let mut per_method: IndexMap<String, Prediction> = IndexMap::new();
        for s in &scores {
            per_method.insert(s.method_id.clone(), classify_method(s, &labels)?);
        }
        predictions.extend(per_method.values().cloned());
        if members.is_empty() {
            continue;
        }
        let member_scores: Vec<_> = scores
            .iter()
            .filter(|s| members.contains(&s.method_id))
            .cloned()
            .collect();
        let ensemble = classify_ensemble(&member_scores, &labels)?;
        if config.ensemble {
            predictions.push(ensemble.clone());
        }
        if config.oracle {
            let components: IndexMap<String, Prediction> = per_method
                .into_iter()
                .filter(|(id, _)| members.contains(id))
                .collect();
            let gold = inst.gold.as_deref().expect("checked above");
            predictions.push(oracle_predict(&components, gold, &ensemble));
        }
    }

    let mut sources: Vec<PredictionSource> = methods
        .ids()
        .into_iter()
        .map(|id| PredictionSource::Method(id.to_string()))
        .collect();
    if config.ensemble {
        sources.push(PredictionSource::Ensemble);
    }
    if config.oracle {
        sources.push(PredictionSource::Oracle);
    }
    let gold_of: HashMap<&str, &str> = corpus
        .instances
        .iter()
        .filter_map(|i| Some((i.id.as_str(), i.gold.as_deref()?)))
        .collect();
    let mut metrics = Vec::new();
    if !gold_of.is_empty() {
        for source in &sources {
            let (mut gold, mut pred, mut ties) = (vec![], vec![], 0u64);
            for p in predictions.iter().filter(|p| &p.source == source) {
                if let Some(g) = gold_of.get(p.instance_id.as_str()) {
                    gold.push(*g);
                    pred.push(p.label.as_str());
                    ties += p.tied as u64;
                }
            }
            let cm = confusion(&gold, &pred, &labels)?;
            metrics.push(SourceMetrics::from_confusion(source.as_str(), &cm, ties)?);
        }
    }

    let report = Report {
        metadata: RunMetadata {
            config_hash: hash.clone(),
            corpus: corpus_name.clone(),
            model_id: backend.model_id().to_string(),
            mode: config.mode.as_str().to_string(),
            methods: methods.ids().iter().map(|s| s.to_string()).collect(),
            ensemble_methods: members.clone(),
            labels: labels.ids().map(str::to_string).collect(),
            sample_n: config.sample.map(|s| s.n),
            sample_seed: config.sample.map(|s| s.seed),
            instances: corpus.len(),
            unlabeled: corpus.len() - gold_of.len(),
            discarded: stats.discarded,
            degenerate_extractions: degenerate,
            oracle_fallback: config.oracle.then(|| ORACLE_FALLBACK_RULE.to_string()),
        },
        sources: metrics,
    };

    let run_dir = config
        .output_dir
        .join(format!("run-{}-{}", sanitize(&corpus_name), &hash[..12]));
    write_run_dir(&run_dir, |dir| {
        let tag = Some(("config_hash", hash.as_str()));
        let mut config_doc = serde_json::to_value(config).expect("config serializes");
        config_doc["config_hash"] = hash.as_str().into();
        write_file(
            &dir.join(CONFIG_FILE),
            format!("{config_doc:#}\n").as_bytes(),
        )?;

        let mut buf = Vec::new();
        matrix.write_jsonl(&mut buf, tag)?;
        write_file(&dir.join(SCORES_FILE), &buf)?;

        let mut buf = Vec::new();
        write_predictions(&predictions, &mut buf, tag)?;
        write_file(&dir.join(PREDICTIONS_FILE), &buf)?;

        for f in ReportFormat::ALL {
            write_file(
                &dir.join(format!("report.{}", f.extension())),
                &render_report(&report, f),
            )?;
        }
        write_file(&dir.join(PLOT_FILE), &render_plot_data(&report))
    })?;

    Ok(RunSummary {
        run_dir,
        config_hash: hash,
        instances: corpus.len(),
        unique_pairs: requests.len(),
        backend_requests,
        cache_hits,
        report,
    })
}

fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

/// Fills a sibling temp directory and renames it into place, so a failed
/// run leaves nothing behind. An existing directory for the same config is
/// replaced only once the new one is complete.
fn write_run_dir(target: &Path, fill: impl FnOnce(&Path) -> Result<()>) -> Result<()> {
    let parent = target.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(parent)
        .map_err(|e| Error::io(format!("creating {}", parent.display()), e))?;
    let name = target
        .file_name()
        .expect("run dir has a name")
        .to_string_lossy();
    let tmp = parent.join(format!(".{name}.tmp-{}", std::process::id()));
    let _ = fs::remove_dir_all(&tmp);
    fs::create_dir(&tmp).map_err(|e| Error::io(format!("creating {}", tmp.display()), e))?;

    let result = fill(&tmp).and_then(|()| {
        if target.exists() {
            let old = parent.join(format!(".{name}.old-{}", std::process::id()));
            fs::rename(target, &old)
                .map_err(|e| Error::io(format!("moving {}", target.display()), e))?;
            fs::rename(&tmp, target)
                .map_err(|e| Error::io(format!("moving into {}", target.display()), e))?;
            let _ = fs::remove_dir_all(&old);
            Ok(())
        } else {
            fs::rename(&tmp, target)
                .map_err(|e| Error::io(format!("moving into {}", target.display()), e))
        }
    });
    if result.is_err() {
        let _ = fs::remove_dir_all(&tmp);
    }
    result
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CacheAction {
    Stats,
    Verify,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CacheOutcome {
    pub text: String,
    /// False when verify found corruption.
    pub clean: bool,
}

pub fn cmd_cache(dir: &Path, action: CacheAction) -> Result<CacheOutcome> {
    if !dir.is_dir() {
        return Err(Error::Config(format!(
            "cache directory {} does not exist",
            dir.display()
        )));
    }
    match action {
        CacheAction::Stats => {
            let stats = ScoreStore::open(dir)?.stats();
            Ok(CacheOutcome {
                text: format!("records\t{}\nbytes\t{}\n", stats.records, stats.bytes),
                clean: true,
            })
        }
        CacheAction::Verify => {
            let report = cache::verify(dir)?;
            let mut text = format!("records\t{}\n", report.records);
            for (offset, reason) in &report.corrupt {
                let _ = writeln!(text, "corrupt\t{offset}\t{reason}");
            }
            if let Some(offset) = report.torn_tail {
                let _ = writeln!(text, "torn-tail\t{offset}");
            }
            text.push_str(if report.is_clean() {
                "ok\n"
            } else {
                "CORRUPT\n"
            });
            Ok(CacheOutcome {
                clean: report.is_clean(),
                text,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture(dir: &Path) -> RunConfig {
        let corpus = dir.join("c.jsonl");
        fs::write(
            &corpus,
            concat!(
                "{\"id\":\"a\",\"text\":\"I won the prize\",\"label\":\"joy\"}\n",
                "{\"id\":\"b\",\"text\":\"They lied to me\",\"label\":\"anger\"}\n",
                "{\"id\":\"c\",\"text\":\"A noise in the dark\",\"label\":\"fear\"}\n",
            ),
        )
        .unwrap();
        RunConfig {
            corpus: Some(CorpusSpec {
                name: Some("tiny".into()),
                path: corpus,
                format: CorpusFormatKind::Jsonl,
                delimited: None,
                mapping: IndexMap::new(),
                skip_malformed: false,
            }),
            labels: vec!["anger".into(), "fear".into(), "joy".into()],
            methods: vec!["emo-name".into(), "expr-emo".into()],
            ensemble: true,
            oracle: true,
            output_dir: dir.join("runs"),
            cache_dir: Some(dir.join("cache")),
            ..RunConfig::default()
        }
    }

    #[test]
    fn toml_round_trip_and_path_resolution() {
        let raw = r#"
            methods = ["expr-emo", "emo-s"]
            ensemble = true
            mode = "binary"
            cache_dir = "cache"

            [corpus]
            path = "data/isear.tsv"
            format = "delimited"
            mapping = { "no emotion" = "DISCARD" }

            [corpus.delimited]
            text_column = "text"
            label_column = 0

            [backend]
            kind = "remote"
            model_id = "roberta-large-mnli"
        "#;
        let cfg = RunConfig::from_toml(raw, Path::new("/exp")).unwrap();
        assert_eq!(cfg.mode, ScoringMode::Binary);
        assert_eq!(
            cfg.corpus.as_ref().unwrap().path,
            Path::new("/exp/data/isear.tsv")
        );
        assert_eq!(cfg.cache_dir.as_deref(), Some(Path::new("/exp/cache")));
        assert_eq!(cfg.labels.len(), 8);
        assert_eq!(cfg.backend.kind, BackendKind::Remote);
        assert!(RunConfig::from_toml("bogus = 1", Path::new(".")).is_err());
    }

    #[test]
    fn hash_tracks_config() {
        let a = RunConfig {
            methods: vec!["emo-name".into()],
            ..RunConfig::default()
        };
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.mode = ScoringMode::Binary;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn method_resolution() {
        let labels = LabelSet::from_ids(&["joy"]).unwrap();
        let mut cfg = RunConfig {
            methods: vec!["nope".into()],
            ..RunConfig::default()
        };
        assert!(matches!(cfg.method_set(&labels), Err(Error::UnknownMethod(id)) if id == "nope"));
        cfg.methods = vec!["ensemble".into()];
        assert!(matches!(cfg.method_set(&labels), Err(Error::Config(_))));
        cfg.methods = vec![];
        assert!(matches!(
            cfg.method_set(&labels),
            Err(Error::EmptyMethodSet)
        ));
        cfg.methods = vec!["emo-name".into(), "emo-name".into()];
        assert!(matches!(cfg.method_set(&labels), Err(Error::Duplicate(_))));
    }

    #[test]
    fn lexicon_and_custom_methods_resolve() {
        let tmp = tempfile::tempdir().unwrap();
        fs::write(
            tmp.path().join("lex.txt"),
            "furious\tanger\t1\ncalm\tanger\t0\nhappy\tjoy\t1\nelated\tjoy\t1\n",
        )
        .unwrap();
        fs::write(
            tmp.path().join("custom.toml"),
            "id = \"mood\"\ncontext = \"feels-person\"\n\n[surfaces]\nanger = [\"cross\"]\njoy = [\"chuffed\", \"glad\"]\n",
        )
        .unwrap();
        let raw = r#"
            labels = ["anger", "joy"]
            methods = ["emolex", "mood", "emo-name"]
            custom_methods = ["custom.toml"]
            ensemble = true

            [lexicon]
            path = "lex.txt"
            category_map = { anger = "anger", joy = "joy" }
        "#;
        let cfg = RunConfig::from_toml(raw, tmp.path()).unwrap();
        assert_eq!(
            cmd_expand(&cfg, ExpandFormat::Tsv).unwrap(),
            "emolex\tanger\tfurious\n\
             emolex\tjoy\thappy\n\
             emolex\tjoy\telated\n\
             mood\tanger\tThis person feels cross\n\
             mood\tjoy\tThis person feels chuffed\n\
             mood\tjoy\tThis person feels glad\n\
             emo-name\tanger\tanger\n\
             emo-name\tjoy\tjoy\n"
        );
        let labels = cfg.label_set().unwrap();
        let methods = cfg.method_set(&labels).unwrap();
        assert_eq!(
            cfg.ensemble_members(&methods).unwrap(),
            ["mood", "emo-name"]
        );
    }

    #[test]
    fn expand_groups() {
        let cfg = RunConfig {
            methods: vec!["expr-emo".into()],
            labels: vec!["joy".into()],
            ..RunConfig::default()
        };
        assert_eq!(
            cmd_expand(&cfg, ExpandFormat::Grouped).unwrap(),
            "# expr-emo / joy\nThis text expresses joy\n"
        );
        assert_eq!(
            cmd_expand(&cfg, ExpandFormat::Tsv).unwrap(),
            "expr-emo\tjoy\tThis text expresses joy\n"
        );
    }

    #[test]
    fn run_writes_all_outputs() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = fixture(tmp.path());
        let summary = cmd_run(&cfg).unwrap();
        // 3 instances × 3 labels × 2 single-variant methods
        assert_eq!(summary.unique_pairs, 18);
        assert_eq!(summary.backend_requests, 18);
        for f in [
            CONFIG_FILE,
            SCORES_FILE,
            PREDICTIONS_FILE,
            "report.tsv",
            "report.md",
            "report.jsonl",
            PLOT_FILE,
        ] {
            let body = fs::read_to_string(summary.run_dir.join(f)).unwrap();
            assert!(
                body.contains(&summary.config_hash),
                "{f} lacks the config hash"
            );
        }
        let preds = fs::read_to_string(summary.run_dir.join(PREDICTIONS_FILE)).unwrap();
        assert_eq!(preds.lines().count(), 3 * 4);
        let sources: Vec<_> = summary
            .report
            .sources
            .iter()
            .map(|s| s.source.as_str())
            .collect();
        assert_eq!(sources, ["emo-name", "expr-emo", "ensemble", "oracle"]);

        let again = cmd_run(&cfg).unwrap();
        assert_eq!(again.backend_requests, 0);
        assert_eq!(again.run_dir, summary.run_dir);

        let leftovers: Vec<_> = fs::read_dir(tmp.path().join("runs"))
            .unwrap()
            .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
            .collect();
        assert_eq!(leftovers.len(), 1, "{leftovers:?}");
    }

    #[test]
    fn oracle_requires_gold() {
        let tmp = tempfile::tempdir().unwrap();
        let mut cfg = fixture(tmp.path());
        let path = &cfg.corpus.as_ref().unwrap().path;
        fs::write(path, "{\"id\":\"a\",\"text\":\"no gold here\"}\n").unwrap();
        let err = cmd_run(&cfg).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("oracle requires gold"));
        assert!(!tmp.path().join("runs").exists());

        cfg.oracle = false;
        let summary = cmd_run(&cfg).unwrap();
        assert!(summary.report.sources.is_empty());
    }

    #[test]
    fn cache_commands() {
        let tmp = tempfile::tempdir().unwrap();
        assert!(cmd_cache(&tmp.path().join("missing"), CacheAction::Stats).is_err());
        let cfg = fixture(tmp.path());
        cmd_run(&cfg).unwrap();
        let dir = cfg.cache_dir.as_ref().unwrap();
        let stats = cmd_cache(dir, CacheAction::Stats).unwrap();
        assert!(stats.text.starts_with("records\t18\n"));
        let verify = cmd_cache(dir, CacheAction::Verify).unwrap();
        assert!(verify.clean);
    }
}

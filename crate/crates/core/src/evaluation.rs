//! Confusion matrices, macro-averaged precision/recall/F1 and report
//! rendering.
//!
//! Classes with a zero denominator contribute 0 to the macro averages.
//! Macro-F1 is the mean of per-class F1 scores, not the harmonic mean of
//! macro precision and recall.

use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::taxonomy::LabelSet;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    labels: LabelSet,
    /// rows = gold, columns = predicted
    counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn labels(&self) -> &LabelSet {
        &self.labels
    }

    pub fn count(&self, gold: usize, pred: usize) -> u64 {
        self.counts[gold][pred]
    }

    pub fn rows(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.counts.len()).map(|i| self.counts[i][i]).sum()
    }

    /// Micro accuracy, trace / total.
    pub fn accuracy(&self) -> f64 {
        match self.total() {
            0 => 0.0,
            t => self.trace() as f64 / t as f64,
        }
    }
}

pub fn confusion<S: AsRef<str>>(
    gold: &[S],
    pred: &[S],
    labels: &LabelSet,
) -> Result<ConfusionMatrix> {
    if gold.len() != pred.len() {
        return Err(Error::LengthMismatch(gold.len(), pred.len()));
    }
    if gold.is_empty() {
        return Err(Error::EmptyCorpus("evaluation".into()));
    }
    let index = |l: &S| {
        labels
            .index_of(l.as_ref())
            .ok_or_else(|| Error::UnknownLabel(l.as_ref().to_string()))
    };
    let mut counts = vec![vec![0u64; labels.len()]; labels.len()];
    for (g, p) in gold.iter().zip(pred) {
        counts[index(g)?][index(p)?] += 1;
    }
    Ok(ConfusionMatrix {
        labels: labels.clone(),
        counts,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassMetrics {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

pub fn class_prf(cm: &ConfusionMatrix, label: &str) -> Result<ClassMetrics> {
    let k = cm
        .labels
        .index_of(label)
        .ok_or_else(|| Error::UnknownLabel(label.to_string()))?;
    let tp = cm.counts[k][k];
    let predicted: u64 = cm.counts.iter().map(|row| row[k]).sum();
    let support: u64 = cm.counts[k].iter().sum();
    let precision = ratio(tp, predicted);
    let recall = ratio(tp, support);
    Ok(ClassMetrics {
        label: label.to_string(),
        precision,
        recall,
        f1: f1_score(precision, recall),
        support,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MacroMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

pub fn macro_prf(cm: &ConfusionMatrix) -> Result<MacroMetrics> {
    if cm.total() == 0 {
        return Err(Error::EmptyCorpus("confusion matrix".into()));
    }
    let per_class = cm
        .labels
        .ids()
        .map(|l| class_prf(cm, l))
        .collect::<Result<Vec<_>>>()?;
    Ok(macro_of(&per_class))
}

fn macro_of(per_class: &[ClassMetrics]) -> MacroMetrics {
    let n = per_class.len() as f64;
    let mean = |f: fn(&ClassMetrics) -> f64| per_class.iter().map(f).sum::<f64>() / n;
    MacroMetrics {
        precision: mean(|c| c.precision),
        recall: mean(|c| c.recall),
        f1: mean(|c| c.f1),
    }
}

/// Metrics for one prediction source (a method, the ensemble, the oracle).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SourceMetrics {
    pub source: String,
    pub evaluated: u64,
    pub per_class: Vec<ClassMetrics>,
    #[serde(rename = "macro")]
    pub macro_avg: MacroMetrics,
    pub accuracy: f64,
    pub ties: u64,
}

impl SourceMetrics {
    pub fn from_confusion(source: &str, cm: &ConfusionMatrix, ties: u64) -> Result<Self> {
        let per_class = cm
            .labels
            .ids()
            .map(|l| class_prf(cm, l))
            .collect::<Result<Vec<_>>>()?;
        if cm.total() == 0 {
            return Err(Error::EmptyCorpus("confusion matrix".into()));
        }
        Ok(Self {
            source: source.to_string(),
            evaluated: cm.total(),
            macro_avg: macro_of(&per_class),
            per_class,
            accuracy: cm.accuracy(),
            ties,
        })
    }
}

/// Everything needed to identify and rerun an experiment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunMetadata {
    pub config_hash: String,
    pub corpus: String,
    pub model_id: String,
    pub mode: String,
    pub methods: Vec<String>,
    pub ensemble_methods: Vec<String>,
    pub labels: Vec<String>,
    pub sample_n: Option<usize>,
    pub sample_seed: Option<u64>,
    pub instances: usize,
    pub unlabeled: usize,
    pub discarded: usize,
    pub degenerate_extractions: u64,
    /// How the oracle decides when no component is correct.
    pub oracle_fallback: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub metadata: RunMetadata,
    pub sources: Vec<SourceMetrics>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Tsv,
    Markdown,
    Jsonl,
}

impl ReportFormat {
    pub const ALL: [ReportFormat; 3] = [
        ReportFormat::Tsv,
        ReportFormat::Markdown,
        ReportFormat::Jsonl,
    ];

    pub fn extension(self) -> &'static str {
        match self {
            ReportFormat::Tsv => "tsv",
            ReportFormat::Markdown => "md",
            ReportFormat::Jsonl => "jsonl",
        }
    }
}

fn fixed3(v: f64) -> String {
    format!("{v:.3}")
}

/// Three decimals without the leading zero, as in published result tables.
pub fn table_number(v: f64) -> String {
    let s = fixed3(v);
    match s.strip_prefix("0.") {
        Some(rest) => format!(".{rest}"),
        None => s,
    }
}

pub fn render_report(report: &Report, format: ReportFormat) -> Vec<u8> {
    match format {
        ReportFormat::Tsv => render_tsv(report),
        ReportFormat::Markdown => render_markdown(report),
        ReportFormat::Jsonl => render_jsonl(report),
    }
    .into_bytes()
}

fn render_tsv(report: &Report) -> String {
    let meta = &report.metadata;
    let mut out = format!("# config_hash={}\n", meta.config_hash);
    out.push_str("corpus\tsource\tlabel\tprecision\trecall\tf1\tsupport\n");
    for s in &report.sources {
        for c in &s.per_class {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}",
                meta.corpus,
                s.source,
                c.label,
                fixed3(c.precision),
                fixed3(c.recall),
                fixed3(c.f1),
                c.support
            );
        }
        let _ = writeln!(
            out,
            "{}\t{}\tmacro\t{}\t{}\t{}\t{}",
            meta.corpus,
            s.source,
            fixed3(s.macro_avg.precision),
            fixed3(s.macro_avg.recall),
            fixed3(s.macro_avg.f1),
            s.evaluated
        );
    }
    out
}

fn render_markdown(report: &Report) -> String {
    let meta = &report.metadata;
    let mut out = String::from("# Results\n\n");
    let _ = writeln!(out, "- config hash: `{}`", meta.config_hash);
    let _ = writeln!(out, "- model: `{}` ({} scoring)", meta.model_id, meta.mode);
    let _ = writeln!(out, "- labels: {}", meta.labels.join(", "));
    let _ = writeln!(out, "- methods: {}", meta.methods.join(", "));
    if !meta.ensemble_methods.is_empty() {
        let _ = writeln!(
            out,
            "- ensemble members: {}",
            meta.ensemble_methods.join(", ")
        );
    }
    match (meta.sample_n, meta.sample_seed) {
        (Some(n), Some(seed)) => {
            let _ = writeln!(out, "- sample: {n} instances, seed {seed}");
        }
        _ => out.push_str("- sample: full corpus\n"),
    }
    let _ = writeln!(
        out,
        "- instances: {} ({} unlabeled, {} discarded at load)",
        meta.instances, meta.unlabeled, meta.discarded
    );
    if meta.degenerate_extractions > 0 {
        let _ = writeln!(
            out,
            "- degenerate binary extractions: {}",
            meta.degenerate_extractions
        );
    }
    if let Some(rule) = &meta.oracle_fallback {
        let _ = writeln!(out, "- oracle fallback: {rule}");
    }

    if report.sources.is_empty() {
        out.push_str("\nNo gold labels; nothing to evaluate.\n");
        return out;
    }

    let _ = writeln!(out, "\n## {}\n", meta.corpus);
    out.push_str("| Method | P | R | F1 | Acc | Ties |\n");
    out.push_str("|---|---:|---:|---:|---:|---:|\n");
    for s in &report.sources {
        let _ = writeln!(
            out,
            "| {} | {} | {} | {} | {} | {} |",
            s.source,
            table_number(s.macro_avg.precision),
            table_number(s.macro_avg.recall),
            table_number(s.macro_avg.f1),
            table_number(s.accuracy),
            s.ties
        );
    }

    out.push_str("\n## Per-class F1\n\n");
    let labels: Vec<&str> = report.sources[0]
        .per_class
        .iter()
        .map(|c| c.label.as_str())
        .collect();
    let _ = writeln!(out, "| Method | {} |", labels.join(" | "));
    let _ = writeln!(out, "|---|{}", "---:|".repeat(labels.len()));
    for s in &report.sources {
        let cells: Vec<String> = s.per_class.iter().map(|c| table_number(c.f1)).collect();
        let _ = writeln!(out, "| {} | {} |", s.source, cells.join(" | "));
    }
    out
}

fn render_jsonl(report: &Report) -> String {
    let mut out = String::new();
    let mut meta = serde_json::to_value(&report.metadata).expect("metadata serializes");
    meta["kind"] = "metadata".into();
    let _ = writeln!(out, "{meta}");
    for s in &report.sources {
        let mut row = serde_json::to_value(s).expect("metrics serialize");
        row["kind"] = "metrics".into();
        row["config_hash"] = report.metadata.config_hash.as_str().into();
        let _ = writeln!(out, "{row}");
    }
    out
}

/// `method,corpus,metric,value` rows for plotting, preceded by a
/// `# config_hash=` comment line.
pub fn render_plot_data(report: &Report) -> Vec<u8> {
    let mut buf = format!("# config_hash={}\n", report.metadata.config_hash).into_bytes();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        w.write_record(["method", "corpus", "metric", "value"])
            .expect("writing to memory");
        for s in &report.sources {
            for (metric, value) in [
                ("P", s.macro_avg.precision),
                ("R", s.macro_avg.recall),
                ("F1", s.macro_avg.f1),
            ] {
                w.write_record([
                    s.source.as_str(),
                    report.metadata.corpus.as_str(),
                    metric,
                    &value.to_string(),
                ])
                .expect("writing to memory");
            }
        }
        w.flush().expect("writing to memory");
    }
    buf
}

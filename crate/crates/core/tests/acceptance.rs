//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails or exceeds its time budget.

mod common;

use std::collections::HashMap;
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use zsl_emotion::corpus::SplitMix64;
use zsl_emotion::evaluation::{class_prf, confusion, macro_prf};
use zsl_emotion::experiment::{
    cmd_expand, cmd_run, run_with_backend, ExpandFormat, RunConfig, PREDICTIONS_FILE, SCORES_FILE,
};
use zsl_emotion::nli::{score_pairs, BatchOptions, MockBackend, ScoreRequest, ScoreTriple};
use zsl_emotion::prompts::BUILTIN_METHOD_IDS;
use zsl_emotion::taxonomy::{LabelSet, BUILTIN_LABELS};

use common::{fixture_config, FIXTURE, FIXTURE_LABELS};

type Check = fn() -> Result<(), String>;

fn main() {
    let criteria: [(&str, Duration, Check); 6] = [
        (
            "brute-force pipeline equivalence",
            Duration::from_secs(1),
            brute_force_equivalence,
        ),
        (
            "prompt golden files",
            Duration::from_secs(1),
            golden_prompts,
        ),
        (
            "oracle dominance",
            Duration::from_secs(10),
            oracle_dominance,
        ),
        ("metrics oracle", Duration::from_secs(5), metrics_oracle),
        (
            "cache determinism",
            Duration::from_secs(2),
            cache_determinism,
        ),
        (
            "batching transparency",
            Duration::from_secs(2),
            batching_transparency,
        ),
    ];

    let mut failed = 0;
    for (name, budget, check) in criteria {
        let start = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(check))
            .unwrap_or_else(|p| Err(format!("panicked: {}", panic_message(&p))));
        let elapsed = start.elapsed();
        let outcome = outcome.and_then(|()| {
            if elapsed <= budget {
                Ok(())
            } else {
                Err(format!("took {elapsed:.3?}, budget {budget:?}"))
            }
        });
        match outcome {
            Ok(()) => println!("PASS  {name} ({elapsed:.3?})"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name} ({elapsed:.3?}): {why}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}

fn panic_message(p: &Box<dyn std::any::Any + Send>) -> String {
    p.downcast_ref::<String>()
        .cloned()
        .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
        .unwrap_or_default()
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// Independent reference implementation of the mock backend and of the
// mean / argmax / ensemble decision rules.

fn ref_fnv(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn ref_entailment(premise: &str, hypothesis: &str) -> f64 {
    let h = ref_fnv(format!("{premise}\u{1f}{hypothesis}").as_bytes());
    let field = |shift: u32| ((h >> shift) & 0x1f_ffff) as f64 + 1.0;
    let (e, n, c) = (field(0), field(21), field(42));
    e / (e + n + c)
}

fn ref_argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..values.len() {
        if values[i] > values[best] {
            best = i;
        }
    }
    best
}

fn ref_hypotheses(method: &str, label: &str) -> Vec<String> {
    let expr_s: HashMap<&str, [&str; 6]> = HashMap::from([
        (
            "anger",
            [
                "anger",
                "annoyance",
                "rage",
                "outrage",
                "fury",
                "irritation",
            ],
        ),
        (
            "fear",
            ["fear", "horror", "anxiety", "terror", "dread", "scare"],
        ),
        (
            "joy",
            [
                "joy",
                "an achievement",
                "pleasure",
                "the awesome",
                "happiness",
                "the blessing",
            ],
        ),
    ]);
    match method {
        "emo-name" => vec![label.to_string()],
        "expr-s" => expr_s[label]
            .iter()
            .map(|s| format!("This text expresses {s}"))
            .collect(),
        _ => unreachable!(),
    }
}

fn read_jsonl(path: &Path) -> Vec<serde_json::Value> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

fn brute_force_equivalence() -> Result<(), String> {
    let tmp = tempfile::tempdir().unwrap();
    let methods = ["emo-name", "expr-s"];
    let cfg = fixture_config(tmp.path(), &methods);
    let summary = cmd_run(&cfg).map_err(|e| e.to_string())?;

    let mut expected_pred: HashMap<(String, String), (String, f64)> = HashMap::new();
    let mut expected_scores: HashMap<(String, String), Vec<Vec<f64>>> = HashMap::new();
    for (id, text, _) in FIXTURE {
        let mut per_method_means = Vec::new();
        for m in methods {
            let variants: Vec<Vec<f64>> = FIXTURE_LABELS
                .iter()
                .map(|l| {
                    ref_hypotheses(m, l)
                        .iter()
                        .map(|h| ref_entailment(text, h))
                        .collect()
                })
                .collect();
            let means: Vec<f64> = variants
                .iter()
                .map(|v| v.iter().sum::<f64>() / v.len() as f64)
                .collect();
            let best = ref_argmax(&means);
            expected_pred.insert(
                (id.into(), m.into()),
                (FIXTURE_LABELS[best].into(), means[best]),
            );
            expected_scores.insert((id.into(), m.into()), variants);
            per_method_means.push(means);
        }
        let ens: Vec<f64> = (0..FIXTURE_LABELS.len())
            .map(|l| per_method_means.iter().map(|m| m[l]).sum::<f64>() / methods.len() as f64)
            .collect();
        let best = ref_argmax(&ens);
        expected_pred.insert(
            (id.into(), "ensemble".into()),
            (FIXTURE_LABELS[best].into(), ens[best]),
        );
    }

    let rows = read_jsonl(&summary.run_dir.join(SCORES_FILE));
    ensure(rows.len() == FIXTURE.len() * methods.len(), || {
        format!("{} score rows", rows.len())
    })?;
    for row in rows {
        let key = (
            row["instance_id"].as_str().unwrap().to_string(),
            row["method_id"].as_str().unwrap().to_string(),
        );
        let want = &expected_scores[&key];
        for (l, label) in FIXTURE_LABELS.iter().enumerate() {
            let got: Vec<f64> = row["scores"][label]
                .as_array()
                .unwrap()
                .iter()
                .map(|v| v.as_f64().unwrap())
                .collect();
            ensure(got.len() == want[l].len(), || {
                format!("{key:?}/{label}: variant count")
            })?;
            for (g, w) in got.iter().zip(&want[l]) {
                ensure((g - w).abs() <= 1e-12, || {
                    format!("{key:?}/{label}: {g} vs {w}")
                })?;
            }
        }
    }

    let preds = read_jsonl(&summary.run_dir.join(PREDICTIONS_FILE));
    ensure(preds.len() == expected_pred.len(), || {
        format!("{} predictions", preds.len())
    })?;
    for p in preds {
        let key = (
            p["instance_id"].as_str().unwrap().to_string(),
            p["source"].as_str().unwrap().to_string(),
        );
        let (label, score) = expected_pred
            .get(&key)
            .ok_or_else(|| format!("unexpected prediction {key:?}"))?;
        ensure(p["label"] == label.as_str(), || {
            format!("{key:?}: {} vs {label}", p["label"])
        })?;
        let got = p["score"].as_f64().unwrap();
        ensure((got - score).abs() <= 1e-12, || {
            format!("{key:?}: mean {got} vs {score}")
        })?;
    }
    Ok(())
}

fn golden_prompts() -> Result<(), String> {
    let golden = include_str!("golden/builtin_prompts.tsv");
    let cfg = RunConfig {
        methods: BUILTIN_METHOD_IDS.iter().map(|s| s.to_string()).collect(),
        ..RunConfig::default()
    };
    let got = cmd_expand(&cfg, ExpandFormat::Tsv).map_err(|e| e.to_string())?;
    if got == golden {
        return Ok(());
    }
    let diff = got
        .lines()
        .zip(golden.lines())
        .find(|(a, b)| a != b)
        .map(|(a, b)| format!("got `{a}`, want `{b}`"))
        .unwrap_or_else(|| {
            format!(
                "{} vs {} lines",
                got.lines().count(),
                golden.lines().count()
            )
        });
    Err(diff)
}

fn pick<'a, T>(rng: &mut SplitMix64, items: &'a [T]) -> &'a T {
    &items[(rng.next_u64() % items.len() as u64) as usize]
}

fn oracle_dominance() -> Result<(), String> {
    const WORDS: [&str; 12] = [
        "the", "storm", "broke", "my", "window", "again", "we", "laughed", "about", "lost", "keys",
        "tonight",
    ];
    let mut rng = SplitMix64::new(0x5EED);
    let tmp = tempfile::tempdir().unwrap();
    for config_no in 0..60 {
        let n_labels = 2 + (rng.next_u64() % 7) as usize;
        let labels: Vec<&str> = BUILTIN_LABELS[..n_labels].to_vec();
        let mut methods: Vec<&str> = BUILTIN_METHOD_IDS
            .iter()
            .copied()
            .filter(|_| rng.next_u64() & 1 == 0)
            .collect();
        if methods.is_empty() {
            methods.push(*pick(&mut rng, &BUILTIN_METHOD_IDS));
        }
        let n_inst = 5 + (rng.next_u64() % 20) as usize;
        let dir = tmp.path().join(format!("c{config_no}"));
        fs::create_dir(&dir).unwrap();
        let mut body = String::new();
        for i in 0..n_inst {
            let text: Vec<&str> = (0..6).map(|_| *pick(&mut rng, &WORDS)).collect();
            let row = serde_json::json!({
                "id": format!("x{i}"),
                "text": format!("{} {i}", text.join(" ")),
                "label": pick(&mut rng, &labels),
            });
            body.push_str(&format!("{row}\n"));
        }
        let corpus = dir.join("random.jsonl");
        fs::write(&corpus, body).unwrap();

        let mut cfg = fixture_config(&dir, &methods);
        cfg.corpus.as_mut().unwrap().path = corpus;
        cfg.labels = labels.iter().map(|s| s.to_string()).collect();
        cfg.oracle = true;
        cfg.cache_dir = None;
        let summary =
            run_with_backend(&cfg, &MockBackend::new("mock-nli")).map_err(|e| e.to_string())?;

        let acc: HashMap<&str, f64> = summary
            .report
            .sources
            .iter()
            .map(|s| (s.source.as_str(), s.accuracy))
            .collect();
        let oracle = acc["oracle"];
        for (source, a) in &acc {
            ensure(oracle >= *a, || {
                format!("config {config_no}: oracle {oracle} < {source} {a} (methods {methods:?})")
            })?;
        }
    }
    Ok(())
}

/// Macro P/R/F1 straight from (gold, pred) pairs.
fn ref_macro(gold: &[&str], pred: &[&str], labels: &[&str]) -> (f64, f64, f64) {
    let (mut p_sum, mut r_sum, mut f_sum) = (0.0, 0.0, 0.0);
    for l in labels {
        let tp = gold
            .iter()
            .zip(pred)
            .filter(|(g, p)| *g == l && *p == l)
            .count() as f64;
        let predicted = pred.iter().filter(|p| *p == l).count() as f64;
        let actual = gold.iter().filter(|g| *g == l).count() as f64;
        let p = if predicted > 0.0 { tp / predicted } else { 0.0 };
        let r = if actual > 0.0 { tp / actual } else { 0.0 };
        let f = if p + r > 0.0 {
            2.0 * p * r / (p + r)
        } else {
            0.0
        };
        p_sum += p;
        r_sum += r;
        f_sum += f;
    }
    let n = labels.len() as f64;
    (p_sum / n, r_sum / n, f_sum / n)
}

fn metrics_oracle() -> Result<(), String> {
    let mut rng = SplitMix64::new(42);
    for case in 0..100 {
        let n_labels = 1 + (rng.next_u64() % 8) as usize;
        let labels = &BUILTIN_LABELS[..n_labels];
        let n = 1 + (rng.next_u64() % 200) as usize;
        let gold: Vec<&str> = (0..n).map(|_| *pick(&mut rng, labels)).collect();
        let pred: Vec<&str> = (0..n).map(|_| *pick(&mut rng, labels)).collect();
        let set = LabelSet::from_ids(labels).unwrap();
        let cm = confusion(&gold, &pred, &set).map_err(|e| e.to_string())?;
        let m = macro_prf(&cm).map_err(|e| e.to_string())?;
        let (p, r, f) = ref_macro(&gold, &pred, labels);
        for (name, got, want) in [("P", m.precision, p), ("R", m.recall, r), ("F1", m.f1, f)] {
            ensure((got - want).abs() <= 1e-12, || {
                format!("case {case}: {name} {got} vs {want}")
            })?;
        }
    }

    let set = LabelSet::from_ids(&["joy", "anger", "fear"]).unwrap();
    let gold = ["joy", "joy", "anger", "anger", "fear", "fear"];
    let pred = ["joy", "anger", "anger", "anger", "fear", "joy"];
    let cm = confusion(&gold, &pred, &set).map_err(|e| e.to_string())?;
    for (label, want) in [("joy", 0.5), ("anger", 0.8), ("fear", 2.0 / 3.0)] {
        let got = class_prf(&cm, label).map_err(|e| e.to_string())?.f1;
        ensure((got - want).abs() <= 1e-12, || {
            format!("worked example {label}: F1 {got} vs {want}")
        })?;
    }
    Ok(())
}

fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}

fn cache_determinism() -> Result<(), String> {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = fixture_config(tmp.path(), &["emo-name", "expr-emo"]);
    let first = cmd_run(&cfg).map_err(|e| e.to_string())?;
    ensure(first.backend_requests > 0, || {
        "first run made no backend calls".into()
    })?;
    let before = snapshot(&first.run_dir);

    let backend = MockBackend::new("mock-nli");
    let second = run_with_backend(&cfg, &backend).map_err(|e| e.to_string())?;
    ensure(
        backend.request_count() == 0 && second.backend_requests == 0,
        || format!("second run sent {} pairs", backend.request_count()),
    )?;
    let after = snapshot(&second.run_dir);
    ensure(before.len() == after.len(), || "different file sets".into())?;
    for ((name, a), (_, b)) in before.iter().zip(&after) {
        ensure(a == b, || format!("{name} differs between runs"))?;
    }
    Ok(())
}

fn batching_transparency() -> Result<(), String> {
    let labels = LabelSet::from_ids(&FIXTURE_LABELS).unwrap();
    let mut requests = Vec::new();
    for (_, text, _) in FIXTURE {
        for m in ["emo-name", "expr-s"] {
            let method = zsl_emotion::prompts::builtin_method(m, &labels).unwrap();
            for l in &labels {
                for v in method.expand(l).unwrap() {
                    requests.push(ScoreRequest::new(text, v.hypothesis));
                }
            }
        }
    }
    let run = |opts: BatchOptions| -> Result<Vec<ScoreTriple>, String> {
        score_pairs(&MockBackend::new("mock-nli"), &requests, opts).map_err(|e| e.to_string())
    };
    let reference = run(BatchOptions::new(1))?;
    for opts in [
        BatchOptions::new(3),
        BatchOptions::new(requests.len()),
        BatchOptions::new(3).with_in_flight(4),
    ] {
        let got = run(opts)?;
        ensure(got == reference, || format!("{opts:?} changed the scores"))?;
    }
    Ok(())
}

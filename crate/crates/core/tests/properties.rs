use indexmap::IndexMap;
use proptest::prelude::*;

use zsl_emotion::aggregation::{
    classify_ensemble, classify_method, method_score, oracle_predict, MethodScore, ScoreMatrix,
};
use zsl_emotion::cache::CacheKey;
use zsl_emotion::corpus::{
    read_corpus, subsample, Corpus, CorpusFormat, Instance, LabelMapping, LoadOptions,
};
use zsl_emotion::evaluation::{confusion, macro_prf};
use zsl_emotion::nli::ScoringMode;
use zsl_emotion::prompts::{builtin_method, RepresentationTable, BUILTIN_METHOD_IDS};
use zsl_emotion::taxonomy::{LabelSet, BUILTIN_LABELS};

fn labels(n: usize) -> LabelSet {
    LabelSet::from_ids(&BUILTIN_LABELS[..n]).unwrap()
}

/// Probabilities on a 1/1000 grid so strictly monotone maps keep them distinct.
fn grid_prob() -> impl Strategy<Value = f64> {
    (0u32..=1000).prop_map(|k| k as f64 / 1000.0)
}

fn method_scores(n_labels: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(grid_prob(), n_labels)
}

fn to_method_score(instance: &str, method: &str, labels: &LabelSet, values: &[f64]) -> MethodScore {
    MethodScore {
        instance_id: instance.into(),
        method_id: method.into(),
        scores: labels
            .ids()
            .map(str::to_string)
            .zip(values.iter().copied())
            .collect(),
    }
}

proptest! {
    #[test]
    fn expansion_is_deterministic(m in 0usize..7, l in 0usize..8) {
        let set = LabelSet::builtin();
        let method = builtin_method(BUILTIN_METHOD_IDS[m], &set).unwrap();
        let label = set.get(l).unwrap();
        let a = method.expand(label).unwrap();
        let b = builtin_method(BUILTIN_METHOD_IDS[m], &set).unwrap().expand(label).unwrap();
        prop_assert_eq!(&a, &b);
        let table_len = RepresentationTable::builtin().surfaces(label.id(), method.context()).unwrap().len();
        prop_assert!(a.len() == 1 || a.len() == table_len);
        for v in &a {
            prop_assert!(v.hypothesis.starts_with(method.context().text()));
            prop_assert_eq!(&v.method_id, BUILTIN_METHOD_IDS[m]);
        }
    }

    #[test]
    fn mean_lies_between_extremes(probs in prop::collection::vec(0.0f64..=1.0, 1..20)) {
        let mean = method_score(&probs).unwrap();
        let min = probs.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = probs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(min - 1e-15 <= mean && mean <= max + 1e-15);
    }

    #[test]
    fn argmax_survives_monotone_maps(n in 2usize..9, seed in any::<u64>()) {
        let set = labels(n);
        let values: Vec<f64> = (0..n).map(|i| ((seed >> (i * 7)) % 1001) as f64 / 1000.0).collect();
        let squashed: Vec<f64> = values.iter().map(|v| v.sqrt() * 0.5 + 0.25).collect();
        let a = classify_method(&to_method_score("i", "m", &set, &values), &set).unwrap();
        let b = classify_method(&to_method_score("i", "m", &set, &squashed), &set).unwrap();
        prop_assert_eq!(a.label, b.label);
        prop_assert_eq!(a.tied, b.tied);
    }

    #[test]
    fn singleton_ensemble_equals_method(values in method_scores(5)) {
        let set = labels(5);
        let ms = to_method_score("i", "emo-name", &set, &values);
        let single = classify_method(&ms, &set).unwrap();
        let ens = classify_ensemble(std::slice::from_ref(&ms), &set).unwrap();
        prop_assert_eq!(single.label, ens.label);
        prop_assert_eq!(single.score, ens.score);
    }

    #[test]
    fn oracle_dominates_components(
        scores in prop::collection::vec(prop::collection::vec(method_scores(4), 1..5), 1..30),
        golds in prop::collection::vec(0usize..4, 30),
    ) {
        let set = labels(4);
        let mut correct: Vec<usize> = vec![0; scores[0].len()];
        let (mut oracle_correct, mut ensemble_correct) = (0, 0);
        for (i, per_method) in scores.iter().enumerate() {
            let gold = set.get(golds[i]).unwrap().id();
            let n_methods = per_method.len().min(correct.len());
            let ms: Vec<MethodScore> = per_method[..n_methods]
                .iter()
                .enumerate()
                .map(|(m, v)| to_method_score(&format!("x{i}"), &format!("m{m}"), &set, v))
                .collect();
            let preds: IndexMap<String, _> = ms
                .iter()
                .map(|s| (s.method_id.clone(), classify_method(s, &set).unwrap()))
                .collect();
            let ens = classify_ensemble(&ms, &set).unwrap();
            let oracle = oracle_predict(&preds, gold, &ens);
            for (m, p) in preds.values().enumerate() {
                correct[m] += (p.label == gold) as usize;
                if p.label == gold {
                    prop_assert_eq!(&oracle.label, gold);
                }
            }
            ensemble_correct += (ens.label == gold) as usize;
            oracle_correct += (oracle.label == gold) as usize;
        }
        prop_assert!(oracle_correct >= ensemble_correct);
        for c in correct {
            prop_assert!(oracle_correct >= c);
        }
    }

    #[test]
    fn macro_metrics_are_bounded(
        n in 1usize..9,
        pairs in prop::collection::vec((0usize..8, 0usize..8), 1..100),
    ) {
        let set = labels(n);
        let gold: Vec<&str> = pairs.iter().map(|(g, _)| BUILTIN_LABELS[g % n]).collect();
        let pred: Vec<&str> = pairs.iter().map(|(_, p)| BUILTIN_LABELS[p % n]).collect();
        let cm = confusion(&gold, &pred, &set).unwrap();
        prop_assert_eq!(cm.total() as usize, pairs.len());
        let m = macro_prf(&cm).unwrap();
        for v in [m.precision, m.recall, m.f1] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        let diagonal = gold == pred;
        prop_assert_eq!(cm.accuracy() == 1.0, diagonal);
    }

    #[test]
    fn subsample_is_ordered_subset(len in 1usize..60, n_frac in 0.0f64..=1.0, seed in any::<u64>()) {
        let instances: Vec<Instance> = (0..len)
            .map(|i| Instance { id: format!("r{i}"), text: format!("text {i}"), gold: None })
            .collect();
        let corpus = Corpus::new("c", instances, labels(2)).unwrap();
        let n = ((len as f64 * n_frac) as usize).max(1);
        let sample = subsample(&corpus, n, seed).unwrap();
        prop_assert_eq!(sample.len(), n);
        let positions: Vec<usize> = sample
            .instances
            .iter()
            .map(|s| corpus.instances.iter().position(|c| c == s).unwrap())
            .collect();
        prop_assert!(positions.windows(2).all(|w| w[0] < w[1]));
        prop_assert_eq!(subsample(&corpus, n, seed).unwrap(), sample);
    }

    #[test]
    fn corpus_jsonl_round_trip(rows in prop::collection::vec(("[a-zA-Z][a-zA-Z ,.!?é]{0,30}", prop::option::of(0usize..3)), 1..20)) {
        let set = labels(3);
        let instances: Vec<Instance> = rows
            .iter()
            .enumerate()
            .map(|(i, (text, gold))| Instance {
                id: format!("id{i}"),
                text: text.trim().to_string(),
                gold: gold.map(|g| BUILTIN_LABELS[g].to_string()),
            })
            .collect();
        let corpus = Corpus::new("rt", instances, set.clone()).unwrap();
        let mut buf = Vec::new();
        corpus.write_jsonl(&mut buf).unwrap();
        let (back, stats) = read_corpus(
            buf.as_slice(),
            "rt",
            &CorpusFormat::Jsonl,
            &LabelMapping::identity(&set),
            &set,
            LoadOptions::default(),
        )
        .unwrap();
        prop_assert_eq!(stats.loaded, corpus.len());
        prop_assert_eq!(back.instances, corpus.instances);
    }

    #[test]
    fn score_matrix_jsonl_round_trip(values in prop::collection::vec(prop::collection::vec(prop::collection::vec(0.0f64..=1.0, 1..4), 3), 1..6)) {
        let set = labels(3);
        let ids: Vec<String> = (0..values.len()).map(|i| format!("x{i}")).collect();
        let cells: Vec<Vec<Vec<Vec<f64>>>> = values.iter().map(|per_label| vec![per_label.clone()]).collect();
        let matrix = ScoreMatrix::new(set.clone(), ids, vec!["emo-s".into()], cells).unwrap();
        let mut buf = Vec::new();
        matrix.write_jsonl(&mut buf, None).unwrap();
        let back = ScoreMatrix::read_jsonl(buf.as_slice(), set).unwrap();
        prop_assert_eq!(back, matrix);
    }
}

#[test]
fn cache_key_is_normalization_insensitive() {
    let composed = CacheKey::new("m", ScoringMode::ThreeWay, "caf\u{e9}", "joy");
    let decomposed = CacheKey::new("m", ScoringMode::ThreeWay, "cafe\u{301}", "joy");
    assert_eq!(composed, decomposed);
    assert_ne!(
        composed,
        CacheKey::new("m", ScoringMode::Binary, "caf\u{e9}", "joy")
    );
}

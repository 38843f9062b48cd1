//! End-to-end runs on small synthetic tasks: determinism, shared episodes,
//! separable data, sweeps and reports.

mod common;

use std::collections::HashMap;

use common::{brute_force_scores, random_confusion, rng};
use proptest::prelude::*;
use tcm_core::experiments::presets::desk_protocol;
use tcm_core::experiments::{
    class_number_sweep, description_sweep, run_protocol, run_seed, Dataset, Method, ProtocolConfig,
    Shots, TrainedModel,
};
use tcm_core::metrics::{accuracy, macro_f1, micro_f1};
use tcm_core::objective::{Classifier, MappingMode};
use tcm_core::text::{
    generate_synthetic, tokenize, Example, LabelDescription, LabelMapping, SyntheticConfig,
    SyntheticTask,
};

/// `classes` classes with 8 signal words each, two per example, no noise.
fn noiseless(classes: usize, per_class: usize) -> SyntheticTask {
    let mut cfg = SyntheticConfig::new(classes, per_class, classes * 9 + 1, 8, 0, 7);
    cfg.signal_per_example = 2;
    generate_synthetic(&cfg).unwrap()
}

fn quick(epochs: usize, k: usize) -> ProtocolConfig {
    let mut cfg = desk_protocol();
    cfg.train.epochs = epochs;
    cfg.shots = Shots::K(k);
    cfg
}

/// Nearest class centroid over bag-of-words counts, with each class's label
/// text counted as one more member; ties go to the first class.
fn centroid_oracle(
    train: &[Example],
    labels: &[String],
    label_texts: &[String],
    text: &str,
) -> usize {
    let bag = |t: &str| {
        let mut m: HashMap<String, f64> = HashMap::new();
        for w in tokenize(t) {
            *m.entry(w).or_default() += 1.0;
        }
        m
    };
    let mut best = (0, f64::NEG_INFINITY);
    let query = bag(text);
    for (c, label) in labels.iter().enumerate() {
        let members: Vec<&str> = train
            .iter()
            .filter(|e| &e.label == label)
            .map(|e| e.text.as_str())
            .chain([label_texts[c].as_str()])
            .collect();
        let mut centroid: HashMap<String, f64> = HashMap::new();
        for t in &members {
            for (w, n) in bag(t) {
                *centroid.entry(w).or_default() += n / members.len() as f64;
            }
        }
        let dist: f64 = query
            .keys()
            .chain(centroid.keys())
            .collect::<std::collections::HashSet<_>>()
            .into_iter()
            .map(|w| (query.get(w).unwrap_or(&0.0) - centroid.get(w).unwrap_or(&0.0)).powi(2))
            .sum();
        if -dist > best.1 {
            best = (c, -dist);
        }
    }
    best.0
}

#[test]
fn tcm_separates_noiseless_classes_like_the_centroid_oracle() {
    let data = Dataset::from_synthetic(noiseless(8, 30));
    let cfg = quick(50, 5);
    let run = run_seed(Method::Tcm, &data, &cfg, 1).unwrap();
    let best = run.history.best_epoch.unwrap();
    let record = run.history.epochs.iter().find(|e| e.epoch == best).unwrap();
    assert_eq!(record.valid_f1, 1.0, "{:?}", run.history.epochs);

    let TrainedModel::Tcm(model) = &run.model else {
        unreachable!()
    };
    let labels = model.labels().names().to_vec();
    let label_texts = model.labels().texts().to_vec();
    let cache = model.build_label_cache().unwrap();
    for e in &run.episode.valid {
        let oracle = centroid_oracle(&run.episode.train, &labels, &label_texts, &e.text);
        assert_eq!(labels[oracle], e.label, "oracle misses {e:?}");
        assert_eq!(model.predict(&cache, &e.text).unwrap().index, oracle);
    }
}

#[test]
fn task_head_separates_noiseless_classes_at_k20() {
    let data = Dataset::from_synthetic(noiseless(8, 50));
    let r = run_protocol(Method::TaskHead, &data, &quick(15, 20), &[1]).unwrap();
    assert_eq!(r.mean.macro_f1, 1.0);
}

#[test]
fn two_class_subsets_are_solved_by_both_methods() {
    let data = Dataset::from_synthetic(noiseless(8, 50));
    let points = class_number_sweep(&data, &[2], &quick(15, 20), &[1, 2]).unwrap();
    assert_eq!(points[0].tcm.mean.macro_f1, 1.0);
    assert_eq!(points[0].task_head.mean.macro_f1, 1.0);
    for s in &points[0].tcm.seeds {
        assert_eq!(s.labels.as_ref().unwrap().len(), 2);
    }
}

#[test]
fn full_class_count_equals_a_plain_run() {
    let data = Dataset::from_synthetic(noiseless(4, 12));
    let cfg = quick(2, 3);
    let points = class_number_sweep(&data, &[4], &cfg, &[1]).unwrap();
    assert_eq!(
        points[0].tcm,
        run_protocol(Method::Tcm, &data, &cfg, &[1]).unwrap()
    );
    assert!(class_number_sweep(&data, &[5], &cfg, &[1]).is_err());
}

#[test]
fn runs_are_deterministic_and_aggregates_recomputable() {
    let data = Dataset::from_synthetic(noiseless(5, 12));
    let cfg = quick(3, 3);
    let a = run_protocol(Method::Tcm, &data, &cfg, &[3, 1, 2]).unwrap();
    let b = run_protocol(Method::Tcm, &data, &cfg, &[3, 1, 2]).unwrap();
    assert_eq!(a.to_json(), b.to_json());
    assert_eq!(
        a.seeds.iter().map(|s| s.seed).collect::<Vec<_>>(),
        vec![1, 2, 3]
    );
    let mean = a.seeds.iter().map(|s| s.scores.macro_f1).sum::<f64>() / 3.0;
    assert!((mean - a.mean.macro_f1).abs() < 1e-15);
    // 12 per class, 3 train and 3 valid: 6 test examples per class.
    for s in &a.seeds {
        let total: u64 = s.confusion.iter().flatten().sum();
        assert_eq!(total, 5 * 6);
        assert!(s.confusion.iter().all(|row| row.iter().sum::<u64>() == 6));
    }
    let single = run_protocol(Method::Tcm, &data, &cfg, &[1]).unwrap();
    assert!(single.std.is_none());
}

#[test]
fn every_method_sees_the_same_episode() {
    let data = Dataset::from_synthetic(noiseless(4, 12));
    let cfg = quick(1, 3);
    let episodes: Vec<_> = Method::ALL
        .iter()
        .map(|&m| run_seed(m, &data, &cfg, 5).unwrap().episode)
        .collect();
    assert!(episodes.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn untrained_similarity_report_is_the_gram_matrix() {
    let data = Dataset::from_synthetic(noiseless(4, 12));
    let mut cfg = quick(1, 3);
    cfg.train.optim.lr = 0.0;
    cfg.train.optim.weight_decay = 0.0;
    let run = run_seed(Method::Tcm, &data, &cfg, 1).unwrap();
    let TrainedModel::Tcm(model) = &run.model else {
        unreachable!()
    };
    let l = model.encode_texts(model.labels().texts()).unwrap();
    let report = run.model.similarity_report().unwrap().unwrap();
    for i in 0..4 {
        for j in 0..4 {
            let dot: f64 = l.row(i).iter().zip(l.row(j)).map(|(a, b)| a * b).sum();
            assert!((report.matrix[i][j] - dot).abs() < 1e-12);
            assert!((report.matrix[i][j] - report.matrix[j][i]).abs() < 1e-9);
        }
    }
    let csv = report.to_csv();
    assert_eq!(csv.lines().count(), 5);
}

#[test]
fn modes_with_identical_texts_give_identical_results() {
    let task = noiseless(4, 12);
    let entries = task
        .mapping
        .iter()
        .map(|(label, d)| {
            let text = d.definition.clone().unwrap();
            (
                label.to_string(),
                LabelDescription {
                    name: text.clone(),
                    definition: Some(text.clone()),
                    sample: Some(text),
                },
            )
        })
        .collect();
    let data = Dataset::new(task.examples, LabelMapping::new(entries).unwrap()).unwrap();
    let points = description_sweep(&data, &MappingMode::ALL, &[3], &quick(2, 3), &[1]).unwrap();
    assert_eq!(points.len(), 3);
    let seeds: Vec<_> = points.iter().map(|p| &p.result.seeds).collect();
    assert!(seeds.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn description_sweep_requires_definitions() {
    let task = noiseless(3, 12);
    let entries = task
        .mapping
        .iter()
        .map(|(label, d)| {
            (
                label.to_string(),
                LabelDescription {
                    definition: None,
                    ..d.clone()
                },
            )
        })
        .collect();
    let data = Dataset::new(task.examples, LabelMapping::new(entries).unwrap()).unwrap();
    let err =
        description_sweep(&data, &[MappingMode::Definition], &[3], &quick(1, 3), &[1]).unwrap_err();
    assert!(err.to_string().contains("missing definition"), "{err}");
}

#[test]
fn metrics_match_brute_force_on_random_matrices() {
    let mut r = rng(77);
    for _ in 0..100 {
        let m = random_confusion(&mut r);
        let (ma, mi, acc) = brute_force_scores(&m);
        assert!((macro_f1(&m).unwrap() - ma).abs() <= 1e-12);
        assert!((micro_f1(&m).unwrap() - mi).abs() <= 1e-12);
        assert!((accuracy(&m).unwrap() - acc).abs() <= 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn macro_f1_is_bounded_and_perfect_only_on_the_diagonal(seed in 0u64..10_000) {
        let m = random_confusion(&mut rng(seed));
        let f = macro_f1(&m).unwrap();
        prop_assert!((0.0..=1.0).contains(&f));
        let off_diagonal: u64 = (0..m.len()).flat_map(|i| (0..m.len()).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| m[i][j]).sum();
        let all_present = (0..m.len()).all(|i| m[i][i] > 0);
        prop_assert_eq!(f == 1.0, off_diagonal == 0 && all_present);
    }
}

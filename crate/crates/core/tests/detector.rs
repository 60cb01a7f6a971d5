mod common;

use std::collections::HashMap;

use common::separable;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use seqsynth::cpar::{train, CparConfig};
use seqsynth::data_model::{generate_fixture_with, FixtureConfig, SequenceDataset};
use seqsynth::detector::*;
use seqsynth::transforms::{build_schema, encoded_fraud_token};

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn small_config(rounds: usize, mode: CategoricalMode) -> GbdtConfig {
    GbdtConfig {
        rounds,
        learning_rate: 0.1,
        categorical_mode: mode,
        ..Default::default()
    }
}

/// Independent path walk over the public node layout.
fn naive_score(model: &GbdtModel, row: &[Feature]) -> f64 {
    let mut total = model.base_score;
    for tree in &model.trees {
        let mut at = 0;
        loop {
            match &tree.nodes[at] {
                TreeNode::Leaf { value } => {
                    total += value;
                    break;
                }
                TreeNode::Numeric { feature, threshold, left, right, .. } => {
                    let x = match &row[*feature] {
                        Feature::Num(x) => *x,
                        Feature::Cat(_) => unreachable!(),
                    };
                    at = if x <= *threshold { *left } else { *right };
                }
                TreeNode::Categorical { feature, left_set, right_set, left, right, default_left } => {
                    let vocab = model.vocabulary(*feature).unwrap();
                    let name = row[*feature].category();
                    let in_set = |set: &[u32]| set.iter().any(|&id| vocab[id as usize] == name);
                    at = if in_set(left_set) {
                        *left
                    } else if in_set(right_set) {
                        *right
                    } else if *default_left {
                        *left
                    } else {
                        *right
                    };
                }
            }
        }
    }
    sigmoid(total)
}

#[test]
fn separable_table_is_learned() {
    let table = separable(10_000, 0.2, 3);
    let (train, test) = train_test_split(&table, 0.8, 1).unwrap();
    let preset = &default_presets()[0];
    let model = GbdtModel::fit(&train, &preset.config).unwrap();
    let probs = model.predict_table(&test).unwrap();
    let r = confusion_metrics(&test.labels, &probs, 0.5).unwrap();
    assert!(r.fnr < 0.05 && r.fpr < 0.05, "{r:?}");
    assert!(model.trees.iter().all(|t| t.depth() <= 5));
}

#[test]
fn predictions_match_naive_walk() {
    let table = separable(1_000, 0.3, 5);
    let (train, test) = train_test_split(&table, 0.5, 2).unwrap();
    let model = GbdtModel::fit(&train, &small_config(40, CategoricalMode::Native)).unwrap();
    // include categories never seen in training
    let mut rows: Vec<Vec<Feature>> = test.rows.iter().take(90).cloned().collect();
    for i in 0..10 {
        let mut r = test.rows[i].clone();
        r[2] = Feature::Cat(format!("unseen{i}"));
        rows.push(r);
    }
    for r in &rows {
        let p = model.predict_proba(r);
        assert!(p > 0.0 && p < 1.0);
        assert!((p - naive_score(&model, r)).abs() < 1e-12);
    }
}

#[test]
fn zero_trees_predict_prevalence() {
    let table = separable(500, 0.1, 8);
    let mut model = GbdtModel::fit(&table, &small_config(3, CategoricalMode::Native)).unwrap();
    model.trees.clear();
    assert!((model.predict_proba(&table.rows[0]) - 0.1).abs() < 1e-12);
}

#[test]
fn fit_rejects_degenerate_tables() {
    let mut table = separable(50, 0.0, 1);
    assert!(matches!(
        GbdtModel::fit(&table, &GbdtConfig::default()),
        Err(DetectorError::SingleClass)
    ));
    table.rows.clear();
    table.labels.clear();
    assert!(matches!(
        GbdtModel::fit(&table, &GbdtConfig::default()),
        Err(DetectorError::EmptyTrain)
    ));
    let bad = GbdtConfig { rounds: 0, ..Default::default() };
    assert!(GbdtModel::fit(&separable(50, 0.5, 1), &bad).is_err());
}

fn rename(table: &LabeledTable) -> LabeledTable {
    let mut t = table.clone();
    for row in &mut t.rows {
        for f in row.iter_mut() {
            if let Feature::Cat(s) = f {
                *s = format!("{}#x", s.chars().rev().collect::<String>());
            }
        }
    }
    t
}

#[test]
fn native_mode_ignores_category_names() {
    let table = separable(2_000, 0.25, 11);
    let (train, test) = train_test_split(&table, 0.8, 4).unwrap();
    let cfg = small_config(60, CategoricalMode::Native);
    let a = GbdtModel::fit(&train, &cfg).unwrap();
    let b = GbdtModel::fit(&rename(&train), &cfg).unwrap();
    let renamed = rename(&test);
    for (x, y) in test.rows.iter().zip(&renamed.rows).take(100) {
        assert_eq!(a.predict_proba(x).to_bits(), b.predict_proba(y).to_bits());
    }
}

/// Positives sit in categories `a` and `c`; under lexicographic codes one
/// threshold cannot isolate them, after renaming `c` to `a2` it can.
fn interleaved() -> (LabeledTable, LabeledTable) {
    let mut t = LabeledTable {
        features: vec![FeatureSpec { name: "k".into(), kind: FeatureKind::Categorical }],
        rows: Vec::new(),
        labels: Vec::new(),
        users: Vec::new(),
    };
    for i in 0..300 {
        let k = ["a", "b", "c"][i % 3];
        t.rows.push(vec![Feature::Cat(k.into())]);
        t.labels.push(k != "b");
        t.users.push("u".into());
    }
    let mut renamed = t.clone();
    for r in &mut renamed.rows {
        if r[0].category() == "c" {
            r[0] = Feature::Cat("a2".into());
        }
    }
    (t, renamed)
}

#[test]
fn ordinal_mode_depends_on_category_names() {
    let (t, renamed) = interleaved();
    let cfg = GbdtConfig { max_depth: 1, ..small_config(20, CategoricalMode::Ordinal) };
    let a = GbdtModel::fit(&t, &cfg).unwrap();
    let b = GbdtModel::fit(&renamed, &cfg).unwrap();
    let pa = a.predict_proba(&t.rows[2]);
    let pb = b.predict_proba(&renamed.rows[2]);
    assert_ne!(pa.to_bits(), pb.to_bits());

    let native = GbdtConfig { categorical_mode: CategoricalMode::Native, ..cfg };
    let a = GbdtModel::fit(&t, &native).unwrap();
    let b = GbdtModel::fit(&renamed, &native).unwrap();
    for (x, y) in t.rows.iter().zip(&renamed.rows).take(3) {
        assert_eq!(a.predict_proba(x).to_bits(), b.predict_proba(y).to_bits());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn training_loss_never_rises(seed in 0u64..1000, rate in 0.1f64..0.5, ordinal in any::<bool>()) {
        let table = separable(300, rate, seed);
        let mode = if ordinal { CategoricalMode::Ordinal } else { CategoricalMode::Native };
        let mut losses = Vec::new();
        GbdtModel::fit_traced(&table, &small_config(30, mode), |_, s| losses.push(log_loss(&table.labels, s))).unwrap();
        prop_assert_eq!(losses.len(), 31);
        for w in losses.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-9, "{} -> {}", w[0], w[1]);
        }
        prop_assert!(losses[30] < losses[0]);
    }

    #[test]
    fn metrics_match_recount(labels in prop::collection::vec(any::<bool>(), 1..200), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let probs: Vec<f64> = labels.iter().map(|_| rng.random()).collect();
        let r = confusion_metrics(&labels, &probs, 0.5).unwrap();
        let count = |y: bool, p: bool| labels.iter().zip(&probs).filter(|(&l, &q)| l == y && (q >= 0.5) == p).count();
        prop_assert_eq!((r.tp, r.fp, r.tn, r.fn_), (count(true, true), count(false, true), count(false, false), count(true, false)));
        if r.fpr_defined {
            prop_assert!((0.0..=1.0).contains(&r.fpr));
            prop_assert_eq!(r.fpr, r.fp as f64 / (r.fp + r.tn) as f64);
        } else {
            prop_assert!(r.fpr.is_nan());
        }
        if r.fnr_defined {
            prop_assert_eq!(r.fnr, r.fn_ as f64 / (r.fn_ + r.tp) as f64);
        } else {
            prop_assert!(r.fnr.is_nan());
        }
    }

    #[test]
    fn split_partitions_rows(n in 10usize..400, frac in 0.1f64..0.9, seed in any::<u64>()) {
        let table = separable(n, 0.2, seed);
        let (a, b) = train_test_split(&table, frac, seed).unwrap();
        prop_assert_eq!(a.len(), (frac * n as f64).round() as usize);
        prop_assert_eq!(a.len() + b.len(), n);
        let key = |t: &LabeledTable| {
            let mut v: Vec<String> = t.rows.iter().zip(&t.labels).map(|(r, l)| format!("{r:?}{l}")).collect();
            v.sort();
            v
        };
        let mut joined = a.clone();
        joined.rows.extend(b.rows.clone());
        joined.labels.extend(b.labels.clone());
        prop_assert_eq!(key(&joined), key(&table));
        let (a2, _) = train_test_split(&table, frac, seed).unwrap();
        prop_assert_eq!(a2, a);
    }
}

#[test]
fn confusion_examples() {
    let mut labels = vec![true; 33];
    let mut probs = vec![0.9; 33];
    probs[0] = 0.1;
    labels.extend([false; 5]);
    probs.extend([0.2; 5]);
    let r = confusion_metrics(&labels, &probs, 0.5).unwrap();
    assert_eq!((r.tp, r.fn_), (32, 1));
    assert!((r.fnr * 100.0 - 3.0303).abs() < 1e-3);
    assert!((r.fnr - 1.0 / 33.0).abs() < 1e-12);

    let r = confusion_metrics(&[true, false], &[0.9, 0.1], 0.5).unwrap();
    assert_eq!((r.fpr, r.fnr), (0.0, 0.0));
    let r = confusion_metrics(&[true, true], &[0.9, 0.1], 0.5).unwrap();
    assert!(!r.fpr_defined && r.fpr.is_nan());
}

fn pools() -> SequenceDataset {
    let raw = generate_fixture_with(&FixtureConfig {
        seed: 4,
        users: 30,
        rows_per_user: 600,
        fraud_rate: 0.4,
        ..Default::default()
    });
    build_schema(1, &raw).unwrap().apply(&raw).unwrap()
}

#[test]
fn mixes_are_exact() {
    let pool = pools();
    for (ratio, fraud) in DEFAULT_RATIOS.iter().zip([100, 500, 1000, 2000, 5000]) {
        let spec = FraudMixSpec { total_rows: 10_000, fraud_fraction: *ratio, seed: 9 };
        let t = mix_dataset(&pool, &pool, &spec).unwrap();
        assert_eq!(t.len(), 10_000);
        assert_eq!(t.positives(), fraud);
        assert!(t.feature_index("Datetime").is_none() && t.feature_index("User").is_none());
        let td = t.feature_index(TIME_DIFF_COLUMN).unwrap();
        assert!(t.rows.iter().all(|r| r[td].number() >= 0.0));
        let mut zeros: HashMap<&str, usize> = HashMap::new();
        for (r, u) in t.rows.iter().zip(&t.users) {
            if r[td].number() == 0.0 {
                *zeros.entry(u).or_default() += 1;
            }
        }
        let users: std::collections::HashSet<&String> = t.users.iter().collect();
        assert!(users.iter().all(|u| zeros.contains_key(u.as_str())));
        assert_eq!(mix_dataset(&pool, &pool, &spec).unwrap(), t);
    }
}

#[test]
fn insufficient_pool() {
    let pool = pools();
    let spec = FraudMixSpec { total_rows: 30_000, fraud_fraction: 0.5, seed: 0 };
    assert!(matches!(
        mix_dataset(&pool, &pool, &spec),
        Err(DetectorError::InsufficientPool { side: "fraud", .. })
    ));
}

#[test]
fn sweep_grid_and_means() {
    let pool = pools();
    let eval = labeled_table(&pool).unwrap();
    let eval = LabeledTable {
        features: eval.features.clone(),
        rows: eval.rows[..2000].to_vec(),
        labels: eval.labels[..2000].to_vec(),
        users: eval.users[..2000].to_vec(),
    };
    let presets: Vec<Preset> = default_presets()
        .into_iter()
        .map(|mut p| {
            p.config.rounds = 5;
            p
        })
        .collect();
    let options = SweepOptions { seeds: 2, total_rows: 600, seed: 3, ..Default::default() };
    let report = ratio_seed_sweep(&pool, &pool, &eval, &presets, &options).unwrap();
    assert_eq!(report.cells.len(), 5 * 2 * 3 * 2);
    assert_eq!(report.summary.len(), 5 * 3 * 2);
    for s in &report.summary {
        let fnrs: Vec<f64> = report
            .cells
            .iter()
            .filter(|c| c.preset == s.preset && c.mode == s.mode && c.ratio == s.ratio)
            .map(|c| c.report.fnr)
            .collect();
        assert_eq!(fnrs.len(), 2);
        assert!((s.mean_fnr - (fnrs[0] + fnrs[1]) / 2.0).abs() < 1e-12);
    }
    let again = ratio_seed_sweep(&pool, &pool, &eval, &presets, &options).unwrap();
    assert_eq!(again, report);
    let dir = tempfile::tempdir().unwrap();
    report.write(dir.path()).unwrap();
    let csv = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    assert!(csv.starts_with("preset,categorical_mode,ratio,seed,tp,fp,tn,fn,fpr,fnr"));
    assert_eq!(csv.lines().count(), 61);
}

#[test]
fn oversampling_yields_exact_fraud_rows() {
    let raw = generate_fixture_with(&FixtureConfig { seed: 6, users: 3, rows_per_user: 40, fraud_rate: 0.3, ..Default::default() });
    let pipeline = build_schema(3, &raw).unwrap();
    let data = pipeline.apply(&raw).unwrap();
    let token = encoded_fraud_token(&pipeline);
    let pos = data.metadata.index_of(LABEL_COLUMN).unwrap();
    let fraud_only = data.filter_rows(|r| r[pos].as_category() == Some(token.as_str()));
    let cfg = CparConfig { hidden_size: 8, epochs: 3, seed: 1, ..Default::default() };
    let (model, _) = train(&fraud_only, &cfg).unwrap();
    let out = oversample_fraud(&model, &fraud_only, 150, &token, 5).unwrap();
    assert_eq!(out.row_count(), 150);
    assert!(out.rows().all(|r| r[pos].as_category() == Some(token.as_str())));
    assert_eq!(oversample_fraud(&model, &fraud_only, 150, &token, 5).unwrap(), out);
    assert_eq!(oversample_fraud(&model, &fraud_only, 0, &token, 5).unwrap().row_count(), 0);
    assert!(matches!(
        oversample_fraud(&model, &fraud_only, 10, "no such token", 5),
        Err(DetectorError::ModelNeverEmitsFraud { .. })
    ));
}

mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use seqsynth::cpar::{
    gradient_check, gradient_check_against, train, CparConfig, CparModel, SampleLength, StepParams, Variable,
    VariableParams, CONTINUE_TERM,
};
use common::naive_total;
use seqsynth::data_model::{generate_fixture_dataset, CellValue, SequenceDataset};
use seqsynth::transforms::build_schema;

fn schema_data(schema: u8, users: usize, rows: usize, seed: u64) -> SequenceDataset {
    let raw = generate_fixture_dataset(seed, users, rows);
    build_schema(schema, &raw).unwrap().apply(&raw).unwrap()
}

/// Schema-3 data with a nullable `Amount` holding some missing cells.
fn with_missing_amounts(mut d: SequenceDataset) -> SequenceDataset {
    let pos = d.metadata.index_of("Amount").unwrap();
    d.metadata.columns[pos].allows_missing = true;
    for (i, seq) in d.sequences.iter_mut().enumerate() {
        for (t, row) in seq.rows.iter_mut().enumerate() {
            if (i + t) % 4 == 1 {
                row[pos] = CellValue::Missing;
            }
        }
    }
    d
}

fn tiny_config(seed: u64) -> CparConfig {
    CparConfig {
        hidden_size: 6,
        epochs: 1,
        seed,
        ..CparConfig::default()
    }
}

#[test]
fn loss_matches_naive_recomputation() {
    let d = with_missing_amounts(schema_data(3, 3, 15, 11));
    let model = CparModel::new(&d, &CparConfig { hidden_size: 8, ..tiny_config(4) }).unwrap();
    let b = model.loss(&d).unwrap();
    let naive = naive_total(&model, &d);
    assert!(((b.total - naive) / naive).abs() < 1e-6, "{} vs {naive}", b.total);
    let by_seq: f64 = b.per_sequence.values().sum();
    let by_col: f64 = b.per_column.values().sum();
    assert!((b.total - by_seq).abs() < 1e-6);
    assert!((b.total - by_col).abs() < 1e-6 * b.total.abs());
    assert!(b.per_column.contains_key(CONTINUE_TERM));
}

#[test]
fn single_row_sequence_loss_expands_to_one_step() {
    let d = schema_data(3, 1, 1, 3);
    let model = CparModel::new(&d, &tiny_config(1)).unwrap();
    let b = model.sequence_loss(&d.sequences[0]).unwrap();
    let p = model.forward_step(&model.context_of(&d.sequences[0]).unwrap(), &[]).unwrap();
    let stop = -(1.0 - p.continue_prob).ln();
    assert!((b.per_column[CONTINUE_TERM] - stop).abs() < 1e-12);
    assert!((b.total - naive_total(&model, &d)).abs() < 1e-9);
}

#[test]
fn gradient_matches_finite_differences() {
    let d = with_missing_amounts(schema_data(3, 3, 5, 21));
    for seed in [1, 2, 3] {
        let model = CparModel::new(&d, &tiny_config(seed)).unwrap();
        let check = gradient_check(&model, &d).unwrap();
        assert!(
            check.max_relative_error < 1e-4,
            "seed {seed}: {} at parameter {}",
            check.max_relative_error,
            check.worst_parameter
        );
    }
}

#[test]
fn corrupted_gradient_is_detected() {
    let d = schema_data(3, 2, 4, 5);
    let model = CparModel::new(&d, &tiny_config(9)).unwrap();
    let (_, mut g) = model.gradient(&d).unwrap();
    let k = (0..g.len()).max_by(|&a, &b| g[a].abs().total_cmp(&g[b].abs())).unwrap();
    g[k] = 0.0;
    assert!(gradient_check_against(&model, &d, &g).unwrap().max_relative_error > 1e-2);
}

#[test]
fn gradient_check_ignores_sequence_order() {
    let d = schema_data(3, 3, 4, 6);
    let model = CparModel::new(&d, &tiny_config(2)).unwrap();
    let mut reversed = d.clone();
    reversed.sequences.reverse();
    let (la, ga) = model.gradient(&d).unwrap();
    let (lb, gb) = model.gradient(&reversed).unwrap();
    assert!((la - lb).abs() < 1e-9 * la.abs());
    assert!(ga.iter().zip(&gb).all(|(a, b)| (a - b).abs() <= 1e-9 * a.abs().max(1.0)));
    let a = gradient_check(&model, &d).unwrap().max_relative_error;
    assert!(a < 1e-4 && gradient_check(&model, &reversed).unwrap().max_relative_error < 1e-4);
}

#[test]
fn incremental_and_full_evaluation_agree() {
    let d = schema_data(3, 1, 30, 8);
    let model = CparModel::new(&d, &CparConfig { hidden_size: 16, ..tiny_config(5) }).unwrap();
    let seq = &d.sequences[0];
    let ctx = model.context_of(seq).unwrap();
    let mut stepper = seqsynth::cpar::Stepper::new(&model, &ctx);
    for t in 0..seq.rows.len() {
        let inc = stepper.params();
        let full = model.forward_step(&ctx, &seq.rows[..t]).unwrap();
        assert!((inc.continue_prob - full.continue_prob).abs() < 1e-6);
        assert!((inc.index_mu - full.index_mu).abs() < 1e-6);
        for (a, b) in inc.variables.iter().zip(&full.variables) {
            match (a, b) {
                (VariableParams::Categorical { probs: p }, VariableParams::Categorical { probs: q }) => {
                    assert!(p.iter().zip(q).all(|(x, y)| (x - y).abs() < 1e-6))
                }
                (
                    VariableParams::Continuous { mu, sigma, miss_prob },
                    VariableParams::Continuous {
                        mu: m2,
                        sigma: s2,
                        miss_prob: p2,
                    },
                ) => assert!((mu - m2).abs() < 1e-6 && (sigma - s2).abs() < 1e-6 && (miss_prob - p2).abs() < 1e-6),
                _ => panic!("head mismatch"),
            }
        }
        stepper.feed(&seq.rows[t]).unwrap();
    }
}

fn assert_valid(p: &StepParams) {
    for v in &p.variables {
        match v {
            VariableParams::Categorical { probs } => {
                assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-6);
                assert!(probs.iter().all(|q| (0.0..=1.0).contains(q)));
            }
            VariableParams::Continuous { sigma, miss_prob, .. } => {
                assert!(*sigma > 0.0);
                assert!((0.0..=1.0).contains(miss_prob));
            }
        }
    }
    assert!(p.index_sigma > 0.0);
    assert!((0.0..=1.0).contains(&p.continue_prob));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn step_params_are_always_valid(seed in 0u64..10_000, len in 0usize..12, scale in 0.1f64..20.0) {
        let d = schema_data(3, 1, 12, seed % 7);
        let mut model = CparModel::new(&d, &CparConfig { hidden_size: 5, seed, ..CparConfig::default() }).unwrap();
        model.params.iter_mut().for_each(|w| *w *= scale);
        let ctx = model.context_of(&d.sequences[0]).unwrap();
        let p = model.forward_step(&ctx, &d.sequences[0].rows[..len]).unwrap();
        assert_valid(&p);
        prop_assert_eq!(p.clone(), model.forward_step(&ctx, &d.sequences[0].rows[..len]).unwrap());
    }
}

#[test]
fn epochs_zero_rejected_and_one_epoch_updates_once_per_sequence() {
    let d = schema_data(3, 3, 10, 2);
    assert!(train(&d, &CparConfig { epochs: 0, ..tiny_config(1) }).is_err());
    let (_, report) = train(&d, &tiny_config(1)).unwrap();
    assert_eq!(report.updates, 3);
    assert_eq!(report.loss_curve.len(), 1);
}

#[test]
fn training_is_deterministic_and_reduces_loss() {
    let d = schema_data(3, 3, 40, 4);
    let config = CparConfig {
        hidden_size: 16,
        epochs: 201,
        learning_rate: 1e-2,
        seed: 7,
        ..CparConfig::default()
    };
    let (ma, ra) = train(&d, &config).unwrap();
    let (mb, rb) = train(&d, &config).unwrap();
    assert_eq!(ra.loss_curve, rb.loss_curve);
    assert_eq!(ma.params, mb.params);
    let curve = &ra.loss_curve;
    let late: f64 = curve[190..=200].iter().sum::<f64>() / 11.0;
    assert!(late < curve[0], "epoch 0 {} vs late mean {late}", curve[0]);
}

#[test]
fn samples_stay_in_vocabulary_and_are_reproducible() {
    let d = schema_data(3, 3, 30, 12);
    let (model, _) = train(&d, &CparConfig { hidden_size: 8, epochs: 3, ..tiny_config(3) }).unwrap();
    let a = model.sample_like(&d, false, 99).unwrap();
    let b = model.sample_like(&d, false, 99).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.row_count(), d.row_count());
    a.check_index_order().unwrap();
    for (pos, spec) in d.metadata.columns.iter().enumerate() {
        if !spec.vocabulary.is_empty() && spec.kind == seqsynth::data_model::ColumnKind::Categorical {
            assert!(a.rows().all(|r| spec.vocabulary.iter().any(|v| Some(v.as_str()) == r[pos].as_category())));
        }
    }
    let amount = d.metadata.index_of("Amount").unwrap();
    let (lo, hi) = d.rows().filter_map(|r| r[amount].as_number()).fold((f64::MAX, f64::MIN), |(l, h), x| (l.min(x), h.max(x)));
    assert!(a.rows().all(|r| r[amount].as_number().is_some_and(|x| x >= lo && x <= hi)));
}

#[test]
fn forced_stop_gives_single_row_sequences() {
    let d = schema_data(3, 3, 10, 13);
    let mut model = CparModel::new(&d, &tiny_config(4)).unwrap();
    *model.output_bias_mut().last_mut().unwrap() = -1e4;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for seq in &d.sequences {
        let ctx = model.context_of(seq).unwrap();
        let s = model.sample_sequence(&seq.key, &ctx, SampleLength::Model, &mut rng).unwrap();
        assert_eq!(s.rows.len(), 1);
    }
}

#[test]
fn sampled_frequencies_match_frozen_probabilities() {
    let d = schema_data(3, 2, 10, 14);
    let model = CparModel::new(&d, &tiny_config(4)).unwrap();
    let ctx = model.context_of(&d.sequences[0]).unwrap();
    let mut p = model.forward_step(&ctx, &[]).unwrap();
    let (j, pos, n_cat) = model
        .layout
        .variables
        .iter()
        .enumerate()
        .find_map(|(j, v)| match v {
            Variable::Categorical { column, position, vocabulary } if column == "Use Chip" => {
                Some((j, *position, vocabulary.len()))
            }
            _ => None,
        })
        .unwrap();
    let target: Vec<f64> = (0..n_cat).map(|k| [0.6, 0.3, 0.1].get(k).copied().unwrap_or(0.0)).collect();
    p.variables[j] = VariableParams::Categorical { probs: target.clone() };
    let vocab = d.metadata.columns[pos].vocabulary.clone();
    let mut counts = vec![0usize; n_cat];
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 10_000;
    for _ in 0..n {
        let (row, _) = model.sample_row(&p, "u", &ctx, None, &mut rng);
        let v = row[pos].as_category().unwrap();
        counts[vocab.iter().position(|c| c == v).unwrap()] += 1;
    }
    for (k, &q) in target.iter().enumerate() {
        let expected = n as f64 * q;
        let sd = (n as f64 * q * (1.0 - q)).sqrt();
        assert!((counts[k] as f64 - expected).abs() <= 3.0 * sd + 1e-9, "category {k}: {} vs {expected}", counts[k]);
    }
}

#[test]
fn checkpoint_round_trip() {
    let d = schema_data(5, 2, 12, 15);
    let (model, report) = train(&d, &CparConfig { hidden_size: 4, epochs: 2, ..tiny_config(8) }).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    model.save(&path).unwrap();
    let back = CparModel::load(&path).unwrap();
    assert_eq!(back, model);
    assert_eq!(back.sample_like(&d, true, 3).unwrap(), model.sample_like(&d, true, 3).unwrap());
    let curve = dir.path().join("loss.csv");
    seqsynth::cpar::write_loss_curve(&curve, &report.loss_curve).unwrap();
    let text = std::fs::read_to_string(curve).unwrap();
    assert!(text.starts_with("epoch,total_loss\n0,"));
}

//! Helpers shared by integration tests.
#![allow(dead_code)]

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use seqsynth::cpar::{CparModel, Variable, VariableParams};
use seqsynth::data_model::{CellValue, SequenceDataset};
use seqsynth::detector::{Feature, FeatureKind, FeatureSpec, LabeledTable};

fn minutes(c: &CellValue) -> f64 {
    (c.as_datetime().unwrap().and_utc().timestamp() / 60) as f64
}

/// Direct evaluation of the loss: every step's parameters come from a full
/// re-run of the history, and every term is written out from its formula.
pub fn naive_total(model: &CparModel, data: &SequenceDataset) -> f64 {
    let layout = &model.layout;
    let mut total = 0.0;
    for seq in &data.sequences {
        let ctx = model.context_of(seq).unwrap();
        let n = seq.rows.len();
        for t in 0..n {
            let p = model.forward_step(&ctx, &seq.rows[..t]).unwrap();
            let row = &seq.rows[t];
            for (v, vp) in layout.variables.iter().zip(&p.variables) {
                match (v, vp) {
                    (Variable::Categorical { vocabulary, position, .. }, VariableParams::Categorical { probs }) => {
                        let y = vocabulary
                            .iter()
                            .position(|c| Some(c.as_str()) == row[*position].as_category())
                            .unwrap();
                        total -= probs[y].ln();
                    }
                    (Variable::Continuous { scale, position, .. }, VariableParams::Continuous { mu, sigma, miss_prob }) => {
                        let m = miss_prob.clamp(1e-6, 1.0 - 1e-6);
                        match row[*position].as_number() {
                            None => total -= m.ln(),
                            Some(x) => {
                                let z = (x - scale.mean) / scale.std;
                                total += 0.5 * (2.0 * PI).ln() + sigma.ln() + (z - mu).powi(2) / (2.0 * sigma * sigma)
                                    - (1.0 - m).ln();
                            }
                        }
                    }
                    _ => panic!("head mismatch"),
                }
            }
            let now = minutes(&row[layout.index_position]);
            let g = if t == 0 {
                (now - layout.start.mean) / layout.start.std
            } else {
                let prev = minutes(&seq.rows[t - 1][layout.index_position]);
                ((now - prev).ln_1p() - layout.gap.mean) / layout.gap.std
            };
            let s = p.index_sigma;
            total += 0.5 * (2.0 * PI).ln() + s.ln() + (g - p.index_mu).powi(2) / (2.0 * s * s);
            let c = p.continue_prob.clamp(1e-6, 1.0 - 1e-6);
            total -= if t + 1 < n { c.ln() } else { (1.0 - c).ln() };
        }
    }
    total
}

/// Fraud rows have large amounts and lean online; the classes barely overlap.
pub fn separable(n: usize, fraud_rate: f64, seed: u64) -> LabeledTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fraud_amount = Normal::new(400.0, 60.0).unwrap();
    let clean_amount = Normal::new(60.0, 30.0).unwrap();
    let n_fraud = (n as f64 * fraud_rate).round() as usize;
    let mut t = LabeledTable {
        features: vec![
            FeatureSpec { name: "Amount".into(), kind: FeatureKind::Numeric },
            FeatureSpec { name: "Channel".into(), kind: FeatureKind::Categorical },
            FeatureSpec { name: "Merchant".into(), kind: FeatureKind::Categorical },
            FeatureSpec { name: "time_diff".into(), kind: FeatureKind::Numeric },
        ],
        rows: Vec::new(),
        labels: Vec::new(),
        users: Vec::new(),
    };
    for i in 0..n {
        let fraud = i < n_fraud;
        let amount = if fraud { fraud_amount.sample(&mut rng) } else { clean_amount.sample(&mut rng) };
        let channel = if fraud == (rng.random::<f64>() < 0.8) { "online" } else { "chip" };
        let merchant = format!("m{}", rng.random_range(0..30) + if fraud { 20 } else { 0 });
        t.rows.push(vec![
            Feature::Num(amount),
            Feature::Cat(channel.into()),
            Feature::Cat(merchant),
            Feature::Num(rng.random_range(0.0..600.0_f64).floor()),
        ]);
        t.labels.push(fraud);
        t.users.push(format!("{}", i % 7));
    }
    // interleave classes
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    LabeledTable {
        features: t.features.clone(),
        rows: order.iter().map(|&i| t.rows[i].clone()).collect(),
        labels: order.iter().map(|&i| t.labels[i]).collect(),
        users: order.iter().map(|&i| t.users[i].clone()).collect(),
    }
}

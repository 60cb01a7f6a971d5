//! Fraud-detection utility harness.
//!
//! Synthetic fraud and non-fraud rows are mixed at fixed ratios, flattened
//! into a labeled table with a `time_diff` feature, and used to train a
//! gradient-boosted tree classifier that is then scored on real data.

mod gbdt;
mod sweep;

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use gbdt::{log_loss, default_presets, CategoricalMode, GbdtConfig, GbdtModel, Preset, Tree, TreeNode};
pub use sweep::{ratio_seed_sweep, SweepCell, SweepOptions, SweepReport, SweepSummaryRow, DEFAULT_RATIOS};

use crate::cpar::{CparError, CparModel};
use crate::data_model::{CellValue, ColumnKind, Row, Sequence, SequenceDataset, TableMetadata};

pub const LABEL_COLUMN: &str = "Is Fraud?";
pub const TIME_DIFF_COLUMN: &str = "time_diff";
pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Error)]
pub enum DetectorError {
    #[error("invalid detector config: {0}")]
    InvalidConfig(String),
    #[error("model produced {found} fraud rows in {sampled} sampled rows, needed {needed}")]
    ModelNeverEmitsFraud { needed: usize, found: usize, sampled: usize },
    #[error("{side} pool has {available} rows, {needed} needed")]
    InsufficientPool {
        side: &'static str,
        needed: usize,
        available: usize,
    },
    #[error("column {0:?} is missing")]
    MissingColumn(String),
    #[error("unrecognized fraud label {0:?}")]
    BadLabel(String),
    #[error("cannot train on an empty table")]
    EmptyTrain,
    #[error("training labels contain a single class")]
    SingleClass,
    #[error("{labels} labels but {predictions} predictions")]
    LengthMismatch { labels: usize, predictions: usize },
    #[error("table features do not match the model")]
    FeatureMismatch,
    #[error(transparent)]
    Cpar(#[from] CparError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Numeric,
    Categorical,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    pub kind: FeatureKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Feature {
    Num(f64),
    Cat(String),
}

impl Feature {
    /// Numeric value; NaN for categories.
    pub fn number(&self) -> f64 {
        match self {
            Feature::Num(x) => *x,
            Feature::Cat(_) => f64::NAN,
        }
    }

    pub fn category(&self) -> &str {
        match self {
            Feature::Cat(s) => s,
            Feature::Num(_) => "",
        }
    }
}

/// Flat feature rows with binary labels. `users` keeps each row's sequence
/// key for auditing; it is not a model feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledTable {
    pub features: Vec<FeatureSpec>,
    pub rows: Vec<Vec<Feature>>,
    pub labels: Vec<bool>,
    pub users: Vec<String>,
}

impl LabeledTable {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&y| y).count()
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.features.iter().position(|f| f.name == name)
    }

    fn select(&self, idx: &[usize]) -> LabeledTable {
        LabeledTable {
            features: self.features.clone(),
            rows: idx.iter().map(|&i| self.rows[i].clone()).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            users: idx.iter().map(|&i| self.users[i].clone()).collect(),
        }
    }
}

/// Reads a fraud label cell. Accepts the raw `Yes`/`No`, the normalized
/// `true`/`false`, and an explicit encoded token for the positive class.
pub fn parse_label(cell: &CellValue, fraud_token: &str) -> Result<bool, DetectorError> {
    match cell {
        CellValue::Category(s) if s == fraud_token || s == "Yes" || s == "true" => Ok(true),
        CellValue::Category(s) if s == "No" || s == "false" => Ok(false),
        other => Err(DetectorError::BadLabel(format!("{other:?}"))),
    }
}

struct Layout {
    features: Vec<FeatureSpec>,
    /// Source column position of each feature except `time_diff`.
    positions: Vec<usize>,
    key: usize,
    index: usize,
    label: usize,
}

fn layout(metadata: &TableMetadata) -> Result<Layout, DetectorError> {
    let label = metadata
        .index_of(LABEL_COLUMN)
        .ok_or_else(|| DetectorError::MissingColumn(LABEL_COLUMN.into()))?;
    let index = metadata
        .index_position()
        .ok_or_else(|| DetectorError::MissingColumn("sequence index".into()))?;
    let key = metadata.key_position();
    let mut features = Vec::new();
    let mut positions = Vec::new();
    for (i, c) in metadata.columns.iter().enumerate() {
        if i == label || i == index || i == key {
            continue;
        }
        let kind = match c.kind {
            ColumnKind::Continuous => FeatureKind::Numeric,
            _ => FeatureKind::Categorical,
        };
        features.push(FeatureSpec {
            name: c.name.clone(),
            kind,
        });
        positions.push(i);
    }
    features.push(FeatureSpec {
        name: TIME_DIFF_COLUMN.into(),
        kind: FeatureKind::Numeric,
    });
    Ok(Layout {
        features,
        positions,
        key,
        index,
        label,
    })
}

fn feature_of(cell: &CellValue, kind: FeatureKind) -> Feature {
    match (kind, cell) {
        (FeatureKind::Numeric, CellValue::Number(x)) => Feature::Num(*x),
        (FeatureKind::Numeric, _) => Feature::Num(f64::NAN),
        (FeatureKind::Categorical, CellValue::Category(s)) => Feature::Cat(s.clone()),
        (FeatureKind::Categorical, CellValue::Missing) => Feature::Cat("(missing)".into()),
        (FeatureKind::Categorical, other) => Feature::Cat(format!("{other:?}")),
    }
}

fn minutes_of(row: &Row, index: usize) -> i64 {
    row[index]
        .as_datetime()
        .map_or(0, |t| t.and_utc().timestamp().div_euclid(60))
}

/// Flattens rows into a table. `time_diff` is taken per user over the given
/// rows in datetime order (stable for ties), 0 for each user's first row.
fn flatten(
    metadata: &TableMetadata,
    rows: &[&Row],
    fraud_token: &str,
) -> Result<LabeledTable, DetectorError> {
    let l = layout(metadata)?;
    let mut by_user: HashMap<&str, Vec<usize>> = HashMap::new();
    for (i, r) in rows.iter().enumerate() {
        by_user.entry(r[l.key].as_category().unwrap_or("")).or_default().push(i);
    }
    let mut time_diff = vec![0.0; rows.len()];
    for idx in by_user.values_mut() {
        idx.sort_by_key(|&i| (minutes_of(rows[i], l.index), i));
        for w in idx.windows(2) {
            time_diff[w[1]] = (minutes_of(rows[w[1]], l.index) - minutes_of(rows[w[0]], l.index)) as f64;
        }
    }
    let mut out = LabeledTable {
        features: l.features.clone(),
        rows: Vec::with_capacity(rows.len()),
        labels: Vec::with_capacity(rows.len()),
        users: Vec::with_capacity(rows.len()),
    };
    for (i, r) in rows.iter().enumerate() {
        let mut f: Vec<Feature> = l
            .positions
            .iter()
            .zip(&l.features)
            .map(|(&p, spec)| feature_of(&r[p], spec.kind))
            .collect();
        f.push(Feature::Num(time_diff[i]));
        out.rows.push(f);
        out.labels.push(parse_label(&r[l.label], fraud_token)?);
        out.users.push(r[l.key].as_category().unwrap_or("").to_string());
    }
    Ok(out)
}

/// The whole dataset as a labeled table, in sequence order. This is the form
/// used for the real-data evaluation set.
pub fn labeled_table(data: &SequenceDataset) -> Result<LabeledTable, DetectorError> {
    let rows: Vec<&Row> = data.rows().collect();
    flatten(&data.metadata, &rows, "true")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FraudMixSpec {
    pub total_rows: usize,
    pub fraud_fraction: f64,
    pub seed: u64,
}

impl FraudMixSpec {
    pub fn fraud_rows(&self) -> usize {
        (self.total_rows as f64 * self.fraud_fraction).round() as usize
    }

    pub fn nonfraud_rows(&self) -> usize {
        self.total_rows - self.fraud_rows()
    }
}

/// Draws `spec.fraud_rows()` fraud rows and the remaining non-fraud rows
/// without replacement, adds `time_diff`, drops the datetime index and the
/// user key, and shuffles.
pub fn mix_dataset(
    fraud_pool: &SequenceDataset,
    nonfraud_pool: &SequenceDataset,
    spec: &FraudMixSpec,
) -> Result<LabeledTable, DetectorError> {
    if !(0.0..=1.0).contains(&spec.fraud_fraction) {
        return Err(DetectorError::InvalidConfig(format!(
            "fraud_fraction {} outside [0, 1]",
            spec.fraud_fraction
        )));
    }
    let label = |d: &SequenceDataset| {
        d.metadata
            .index_of(LABEL_COLUMN)
            .ok_or_else(|| DetectorError::MissingColumn(LABEL_COLUMN.into()))
    };
    let (fl, nl) = (label(fraud_pool)?, label(nonfraud_pool)?);
    let mut fraud: Vec<&Row> = Vec::new();
    for r in fraud_pool.rows() {
        if parse_label(&r[fl], "true")? {
            fraud.push(r);
        }
    }
    let mut clean: Vec<&Row> = Vec::new();
    for r in nonfraud_pool.rows() {
        if !parse_label(&r[nl], "true")? {
            clean.push(r);
        }
    }
    let (nf, nn) = (spec.fraud_rows(), spec.nonfraud_rows());
    if fraud.len() < nf {
        return Err(DetectorError::InsufficientPool {
            side: "fraud",
            needed: nf,
            available: fraud.len(),
        });
    }
    if clean.len() < nn {
        return Err(DetectorError::InsufficientPool {
            side: "non-fraud",
            needed: nn,
            available: clean.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    fraud.shuffle(&mut rng);
    clean.shuffle(&mut rng);
    let chosen: Vec<&Row> = fraud[..nf].iter().chain(&clean[..nn]).copied().collect();
    let table = flatten(&fraud_pool.metadata, &chosen, "true")?;
    let mut order: Vec<usize> = (0..chosen.len()).collect();
    order.shuffle(&mut rng);
    Ok(table.select(&order))
}

/// Stratified split: each class is shuffled with the seed and cut so the
/// train side holds `round(train_fraction · n)` rows in total.
pub fn train_test_split(
    table: &LabeledTable,
    train_fraction: f64,
    seed: u64,
) -> Result<(LabeledTable, LabeledTable), DetectorError> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(DetectorError::InvalidConfig(format!(
            "train_fraction {train_fraction} outside (0, 1)"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pos: Vec<usize> = (0..table.len()).filter(|&i| table.labels[i]).collect();
    let mut neg: Vec<usize> = (0..table.len()).filter(|&i| !table.labels[i]).collect();
    pos.shuffle(&mut rng);
    neg.shuffle(&mut rng);
    let n_train = (train_fraction * table.len() as f64).round() as usize;
    let mut pos_train = ((train_fraction * pos.len() as f64).round() as usize).min(pos.len());
    // keep a positive on each side when there are at least two
    if pos.len() >= 2 {
        pos_train = pos_train.clamp(1, pos.len() - 1);
    }
    let neg_train = n_train.saturating_sub(pos_train).min(neg.len());
    let pos_train = (n_train - neg_train).min(pos.len());
    let mut train: Vec<usize> = pos[..pos_train].iter().chain(&neg[..neg_train]).copied().collect();
    let mut test: Vec<usize> = pos[pos_train..].iter().chain(&neg[neg_train..]).copied().collect();
    train.shuffle(&mut rng);
    test.shuffle(&mut rng);
    Ok((table.select(&train), table.select(&test)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfusionReport {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    /// NaN when there are no negatives.
    pub fpr: f64,
    /// NaN when there are no positives.
    pub fnr: f64,
    pub fpr_defined: bool,
    pub fnr_defined: bool,
    pub threshold: f64,
}

impl ConfusionReport {
    pub fn from_counts(tp: usize, fp: usize, tn: usize, fn_: usize, threshold: f64) -> Self {
        let rate = |num: usize, den: usize| {
            if den == 0 {
                f64::NAN
            } else {
                num as f64 / den as f64
            }
        };
        ConfusionReport {
            tp,
            fp,
            tn,
            fn_,
            fpr: rate(fp, fp + tn),
            fnr: rate(fn_, fn_ + tp),
            fpr_defined: fp + tn > 0,
            fnr_defined: fn_ + tp > 0,
            threshold,
        }
    }
}

/// A row is predicted positive when its probability is at least `threshold`.
pub fn confusion_metrics(
    labels: &[bool],
    predictions: &[f64],
    threshold: f64,
) -> Result<ConfusionReport, DetectorError> {
    if labels.len() != predictions.len() {
        return Err(DetectorError::LengthMismatch {
            labels: labels.len(),
            predictions: predictions.len(),
        });
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for (&y, &p) in labels.iter().zip(predictions) {
        match (y, p >= threshold) {
            (true, true) => tp += 1,
            (true, false) => fn_ += 1,
            (false, true) => fp += 1,
            (false, false) => tn += 1,
        }
    }
    Ok(ConfusionReport::from_counts(tp, fp, tn, fn_, threshold))
}

/// Samples sequences from a model trained on fraud-only sub-sequences until
/// `target_rows` fraud rows are collected, keeping only rows whose label
/// equals `fraud_token` and truncating to exactly `target_rows`.
///
/// Sequences are drawn in rounds shaped like `template` (same keys and
/// contexts, model-chosen lengths). Sequence keys repeat across rounds, so
/// the result may hold several sequences per key.
pub fn oversample_fraud(
    model: &CparModel,
    template: &SequenceDataset,
    target_rows: usize,
    fraud_token: &str,
    seed: u64,
) -> Result<SequenceDataset, DetectorError> {
    let metadata = model.layout.metadata.clone();
    let mut out = SequenceDataset::new(metadata.clone());
    if target_rows == 0 {
        return Ok(out);
    }
    let label = metadata
        .index_of(LABEL_COLUMN)
        .ok_or_else(|| DetectorError::MissingColumn(LABEL_COLUMN.into()))?;
    let budget = target_rows.saturating_mul(10);
    let (mut found, mut sampled) = (0usize, 0usize);
    let mut round = 0u64;
    while found < target_rows {
        if sampled >= budget || template.sequences.is_empty() {
            return Err(DetectorError::ModelNeverEmitsFraud {
                needed: target_rows,
                found,
                sampled,
            });
        }
        let batch = model.sample_like(template, true, seed.wrapping_add(round.wrapping_mul(0x9e37_79b9_7f4a_7c15)))?;
        round += 1;
        for seq in batch.sequences {
            sampled += seq.len();
            let rows: Vec<Row> = seq
                .rows
                .into_iter()
                .filter(|r| r[label].as_category() == Some(fraud_token))
                .take(target_rows - found)
                .collect();
            found += rows.len();
            if !rows.is_empty() {
                out.sequences.push(Sequence { key: seq.key, rows });
            }
            if found == target_rows {
                break;
            }
        }
    }
    Ok(out)
}

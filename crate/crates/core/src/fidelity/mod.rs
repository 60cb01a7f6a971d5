//! Distributional comparisons between real and synthetic tables.
//!
//! All functions expect the numeric-amount, single-datetime representation
//! produced by preprocessing schema 1.

mod report;

pub use report::{fidelity_bundle, run_label, sanitize, FidelityBundle, FidelityOptions, REAL_LABEL};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data_model::{CellValue, ColumnKind, ColumnSpec, SequenceDataset};
use crate::transforms::{merge_location, TransformError, LOCATION_COLUMN};

pub const MISSING_KEY: &str = "(missing)";
pub const DEFAULT_HISTOGRAM_BINS: usize = 80;
pub const DEFAULT_TIME_DEPENDENCY_ROWS: usize = 300;

#[derive(Debug, Error)]
pub enum FidelityError {
    #[error("column `{0}` is not categorical")]
    NotCategorical(String),
    #[error("column `{0}` not present")]
    MissingColumn(String),
    #[error("both count tables are empty")]
    BothEmpty,
    #[error("column `{0}` has no numeric values")]
    EmptyColumn(String),
    #[error("at least one synthetic run is required")]
    NoRuns,
    #[error("data has no datetime sequence index")]
    NoSequenceIndex,
    #[error(transparent)]
    Transform(#[from] TransformError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Counts = IndexMap<String, usize>;

/// Count-like values that [`total_variation`] can normalize.
pub trait Mass: Copy {
    fn mass(self) -> f64;
}

impl Mass for usize {
    fn mass(self) -> f64 {
        self as f64
    }
}

impl Mass for f64 {
    fn mass(self) -> f64 {
        self
    }
}

fn position(data: &SequenceDataset, column: &str) -> Result<usize, FidelityError> {
    data.metadata
        .index_of(column)
        .ok_or_else(|| FidelityError::MissingColumn(column.to_string()))
}

/// Exact category counts in first-occurrence order; missing cells are
/// counted under [`MISSING_KEY`].
pub fn marginal_counts(data: &SequenceDataset, column: &str) -> Result<Counts, FidelityError> {
    let pos = position(data, column)?;
    if !matches!(
        data.metadata.columns[pos].kind,
        ColumnKind::Categorical | ColumnKind::SequenceKey
    ) {
        return Err(FidelityError::NotCategorical(column.to_string()));
    }
    let mut counts = Counts::new();
    for row in data.rows() {
        let key = match &row[pos] {
            CellValue::Category(c) => c.as_str(),
            _ => MISSING_KEY,
        };
        *counts.entry(key.to_string()).or_insert(0) += 1;
    }
    Ok(counts)
}

/// Half the L1 distance between the normalized count vectors, over the union
/// of categories. An empty side counts as all-zero mass.
pub fn total_variation<V: Mass>(
    a: &IndexMap<String, V>,
    b: &IndexMap<String, V>,
) -> Result<f64, FidelityError> {
    let sa: f64 = a.values().map(|&v| v.mass()).sum();
    let sb: f64 = b.values().map(|&v| v.mass()).sum();
    if sa <= 0.0 && sb <= 0.0 {
        return Err(FidelityError::BothEmpty);
    }
    let norm = |v: Option<&V>, s: f64| if s > 0.0 { v.map_or(0.0, |&v| v.mass() / s) } else { 0.0 };
    let mut sum = 0.0;
    for (k, v) in a {
        sum += (norm(Some(v), sa) - norm(b.get(k), sb)).abs();
    }
    for (k, v) in b {
        if !a.contains_key(k) {
            sum += norm(Some(v), sb);
        }
    }
    Ok((0.5 * sum).min(1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountRow {
    pub category: String,
    pub real_count: usize,
    pub synthetic_counts: Vec<usize>,
    pub synthetic_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalReport {
    pub column: String,
    pub rows: Vec<CountRow>,
    /// Between the real counts and the mean synthetic counts.
    pub tvd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopKTable {
    pub column: String,
    pub k: usize,
    pub rows: Vec<CountRow>,
}

fn count_rows(real: &Counts, runs: &[Counts]) -> Vec<CountRow> {
    let mut keys: Vec<&String> = real.keys().collect();
    for run in runs {
        keys.extend(run.keys().filter(|k| !real.contains_key(*k)));
    }
    let mut seen = std::collections::HashSet::new();
    keys.retain(|k| seen.insert(*k));
    keys.into_iter()
        .map(|k| {
            let synthetic_counts: Vec<usize> = runs.iter().map(|r| r.get(k).copied().unwrap_or(0)).collect();
            let synthetic_mean = synthetic_counts.iter().sum::<usize>() as f64 / runs.len().max(1) as f64;
            CountRow {
                category: k.clone(),
                real_count: real.get(k).copied().unwrap_or(0),
                synthetic_counts,
                synthetic_mean,
            }
        })
        .collect()
}

pub fn marginal_report(
    real: &SequenceDataset,
    runs: &[SequenceDataset],
    column: &str,
) -> Result<MarginalReport, FidelityError> {
    if runs.is_empty() {
        return Err(FidelityError::NoRuns);
    }
    let real_counts = marginal_counts(real, column)?;
    let run_counts = runs
        .iter()
        .map(|r| marginal_counts(r, column))
        .collect::<Result<Vec<_>, _>>()?;
    let rows = count_rows(&real_counts, &run_counts);
    let real_map: IndexMap<String, f64> = rows.iter().map(|r| (r.category.clone(), r.real_count as f64)).collect();
    let mean_map: IndexMap<String, f64> = rows.iter().map(|r| (r.category.clone(), r.synthetic_mean)).collect();
    Ok(MarginalReport {
        column: column.to_string(),
        tvd: total_variation(&real_map, &mean_map)?,
        rows,
    })
}

/// The `k` most frequent real categories, by descending real count with ties
/// in first-occurrence order; synthetic runs never affect the order.
pub fn topk_table(
    real: &SequenceDataset,
    runs: &[SequenceDataset],
    column: &str,
    k: usize,
) -> Result<TopKTable, FidelityError> {
    if runs.is_empty() {
        return Err(FidelityError::NoRuns);
    }
    let real_counts = marginal_counts(real, column)?;
    let run_counts = runs
        .iter()
        .map(|r| marginal_counts(r, column))
        .collect::<Result<Vec<_>, _>>()?;
    let mut rows: Vec<CountRow> = count_rows(&real_counts, &run_counts)
        .into_iter()
        .filter(|r| real_counts.contains_key(&r.category))
        .collect();
    rows.sort_by(|a, b| b.real_count.cmp(&a.real_count));
    rows.truncate(k);
    Ok(TopKTable {
        column: column.to_string(),
        k,
        rows,
    })
}

/// Adds a `Location` column merging the four merchant fields, unless one is
/// already present.
pub fn with_location(data: &SequenceDataset) -> Result<SequenceDataset, FidelityError> {
    if data.metadata.index_of(LOCATION_COLUMN).is_some() {
        return Ok(data.clone());
    }
    let fields = ["Merchant Name", "Merchant City", "Merchant State", "Zip"]
        .map(|c| position(data, c))
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
    let mut out = data.clone();
    out.metadata
        .columns
        .push(ColumnSpec::new(LOCATION_COLUMN, ColumnKind::Categorical));
    for seq in &mut out.sequences {
        for row in &mut seq.rows {
            let parts: Vec<&str> = fields.iter().map(|&i| row[i].as_category().unwrap_or("")).collect();
            let merged = merge_location(parts[0], parts[1], parts[2], parts[3])?;
            row.push(CellValue::Category(merged));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramReport {
    pub column: String,
    pub bin_edges: Vec<f64>,
    /// Per dataset label, the fraction of values in each bin.
    pub densities: IndexMap<String, Vec<f64>>,
}

impl HistogramReport {
    /// Total variation between two datasets' binned distributions.
    pub fn tvd(&self, a: &str, b: &str) -> Option<f64> {
        let (da, db) = (self.densities.get(a)?, self.densities.get(b)?);
        Some(0.5 * da.iter().zip(db).map(|(x, y)| (x - y).abs()).sum::<f64>())
    }
}

fn numeric_values(data: &SequenceDataset, column: &str) -> Result<Vec<f64>, FidelityError> {
    let pos = position(data, column)?;
    Ok(data.rows().filter_map(|r| r[pos].as_number()).collect())
}

/// Equal-width bins over the pooled range of `column` across all datasets.
pub fn amount_histogram(
    datasets: &[(&str, &SequenceDataset)],
    column: &str,
    bins: usize,
) -> Result<HistogramReport, FidelityError> {
    let bins = bins.max(1);
    let values = datasets
        .iter()
        .map(|(_, d)| numeric_values(d, column))
        .collect::<Result<Vec<_>, _>>()?;
    if values.iter().any(Vec::is_empty) {
        return Err(FidelityError::EmptyColumn(column.to_string()));
    }
    let lo = values.iter().flatten().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max);
    let (lo, width) = if hi > lo {
        (lo, (hi - lo) / bins as f64)
    } else {
        (lo - 0.5, 1.0 / bins as f64)
    };
    let bin_edges: Vec<f64> = (0..=bins).map(|i| lo + width * i as f64).collect();
    let densities = datasets
        .iter()
        .zip(&values)
        .map(|((label, _), vals)| {
            let mut counts = vec![0.0; bins];
            for &x in vals {
                let b = (((x - lo) / width).floor().max(0.0) as usize).min(bins - 1);
                counts[b] += 1.0;
            }
            let n = vals.len() as f64;
            (label.to_string(), counts.into_iter().map(|c| c / n).collect())
        })
        .collect();
    Ok(HistogramReport {
        column: column.to_string(),
        bin_edges,
        densities,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimePoint {
    pub user: String,
    pub minutes_since_last: f64,
    pub amount: Option<f64>,
}

/// Minutes since each user's previous transaction (0 for the first) paired
/// with the amount, users in dataset order, truncated to `n` points.
pub fn time_dependency(data: &SequenceDataset, amount_column: &str, n: usize) -> Result<Vec<TimePoint>, FidelityError> {
    let idx = data.metadata.index_position().ok_or(FidelityError::NoSequenceIndex)?;
    let amount = position(data, amount_column)?;
    let mut out = Vec::with_capacity(n);
    'outer: for seq in &data.sequences {
        let mut prev = None;
        for row in &seq.rows {
            if out.len() == n {
                break 'outer;
            }
            let t = row[idx].as_datetime().ok_or(FidelityError::NoSequenceIndex)?;
            let minutes = prev.map_or(0, |p: chrono::NaiveDateTime| (t - p).num_minutes()) as f64;
            prev = Some(t);
            out.push(TimePoint {
                user: seq.key.clone(),
                minutes_since_last: minutes,
                amount: row[amount].as_number(),
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn counts(pairs: &[(&str, usize)]) -> Counts {
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    #[test]
    fn tvd_examples() {
        let a = counts(&[("A", 3), ("B", 1)]);
        let b = counts(&[("A", 1), ("B", 3)]);
        assert!((total_variation(&a, &b).unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(total_variation(&a, &a).unwrap(), 0.0);
        assert_eq!(total_variation(&a, &counts(&[("C", 5)])).unwrap(), 1.0);
        assert!(matches!(
            total_variation(&Counts::new(), &Counts::new()),
            Err(FidelityError::BothEmpty)
        ));
    }
}

use std::fs;
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::{
    amount_histogram, marginal_report, time_dependency, topk_table, with_location, FidelityError, HistogramReport,
    MarginalReport, TimePoint, TopKTable, DEFAULT_HISTOGRAM_BINS, DEFAULT_TIME_DEPENDENCY_ROWS,
};
use crate::data_model::SequenceDataset;
use crate::transforms::LOCATION_COLUMN;

pub const REAL_LABEL: &str = "original";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FidelityOptions {
    pub marginal_columns: Vec<String>,
    pub location_k: usize,
    pub mcc_k: usize,
    pub histogram_bins: usize,
    pub time_dependency_rows: usize,
    pub amount_column: String,
}

impl Default for FidelityOptions {
    fn default() -> Self {
        FidelityOptions {
            marginal_columns: ["Is Fraud?", "User", "Use Chip", "Errors?"].map(String::from).to_vec(),
            location_k: 50,
            mcc_k: 25,
            histogram_bins: DEFAULT_HISTOGRAM_BINS,
            time_dependency_rows: DEFAULT_TIME_DEPENDENCY_ROWS,
            amount_column: "Amount".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidelityBundle {
    pub runs: usize,
    pub marginals: Vec<MarginalReport>,
    pub location: TopKTable,
    pub mcc: TopKTable,
    pub histogram: HistogramReport,
    pub time_dependency: IndexMap<String, Vec<TimePoint>>,
}

pub fn run_label(i: usize) -> String {
    format!("run_{i:02}")
}

/// Computes every report comparing `real` with the synthetic `runs`.
pub fn fidelity_bundle(
    real: &SequenceDataset,
    runs: &[SequenceDataset],
    options: &FidelityOptions,
) -> Result<FidelityBundle, FidelityError> {
    if runs.is_empty() {
        return Err(FidelityError::NoRuns);
    }
    let marginals = options
        .marginal_columns
        .iter()
        .map(|c| marginal_report(real, runs, c))
        .collect::<Result<Vec<_>, _>>()?;

    let real_loc = with_location(real)?;
    let runs_loc = runs.iter().map(with_location).collect::<Result<Vec<_>, _>>()?;
    let location = topk_table(&real_loc, &runs_loc, LOCATION_COLUMN, options.location_k)?;
    let mcc = topk_table(real, runs, "MCC", options.mcc_k)?;

    let labels: Vec<String> = std::iter::once(REAL_LABEL.to_string())
        .chain((0..runs.len()).map(run_label))
        .collect();
    let datasets: Vec<(&str, &SequenceDataset)> = labels
        .iter()
        .map(String::as_str)
        .zip(std::iter::once(real).chain(runs))
        .collect();
    let histogram = amount_histogram(&datasets, &options.amount_column, options.histogram_bins)?;
    let time_dependency = datasets
        .iter()
        .map(|(l, d)| {
            Ok((
                l.to_string(),
                time_dependency(d, &options.amount_column, options.time_dependency_rows)?,
            ))
        })
        .collect::<Result<_, FidelityError>>()?;

    Ok(FidelityBundle {
        runs: runs.len(),
        marginals,
        location,
        mcc,
        histogram,
        time_dependency,
    })
}

/// Lowercase ASCII alphanumerics with other runs collapsed to `_`.
pub fn sanitize(column: &str) -> String {
    let mut out = String::new();
    for ch in column.chars() {
        if ch.is_ascii_alphanumeric() {
            out.push(ch.to_ascii_lowercase());
        } else if !out.ends_with('_') {
            out.push('_');
        }
    }
    out.trim_matches('_').to_string()
}

#[derive(Serialize)]
struct Summary<'a> {
    runs: usize,
    histogram_bins: usize,
    marginal_tvd: IndexMap<&'a str, f64>,
    location_top_tvd: f64,
    mcc_top_tvd: f64,
    /// Per run, histogram TVD against the original data.
    amount_histogram_tvd: IndexMap<String, f64>,
    amount_histogram_tvd_mean: f64,
}

fn table_tvd(table: &TopKTable) -> f64 {
    let real: IndexMap<String, f64> = table.rows.iter().map(|r| (r.category.clone(), r.real_count as f64)).collect();
    let synth: IndexMap<String, f64> = table.rows.iter().map(|r| (r.category.clone(), r.synthetic_mean)).collect();
    super::total_variation(&real, &synth).unwrap_or(0.0)
}

fn write_counts(path: &Path, rows: &[super::CountRow], runs: usize, ranked: bool) -> Result<(), FidelityError> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = Vec::new();
    if ranked {
        header.push("rank".into());
    }
    header.extend(["category", "real_count", "synthetic_mean"].map(String::from));
    header.extend((0..runs).map(run_label));
    w.write_record(&header)?;
    for (i, r) in rows.iter().enumerate() {
        let mut rec: Vec<String> = Vec::new();
        if ranked {
            rec.push((i + 1).to_string());
        }
        rec.push(r.category.clone());
        rec.push(r.real_count.to_string());
        rec.push(r.synthetic_mean.to_string());
        rec.extend(r.synthetic_counts.iter().map(usize::to_string));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

impl FidelityBundle {
    /// Writes one CSV per report plus `summary.json` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<Vec<String>, FidelityError> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let mut files = Vec::new();
        for m in &self.marginals {
            let name = format!("marginals_{}.csv", sanitize(&m.column));
            write_counts(&dir.join(&name), &m.rows, self.runs, false)?;
            files.push(name);
        }
        let loc = format!("location_top{}.csv", self.location.k);
        write_counts(&dir.join(&loc), &self.location.rows, self.runs, true)?;
        let mcc = format!("mcc_top{}.csv", self.mcc.k);
        write_counts(&dir.join(&mcc), &self.mcc.rows, self.runs, true)?;
        files.extend([loc, mcc]);

        let mut w = csv::Writer::from_path(dir.join("amount_hist.csv"))?;
        let mut header = vec!["bin_low".to_string(), "bin_high".to_string()];
        header.extend(self.histogram.densities.keys().cloned());
        w.write_record(&header)?;
        for b in 0..self.histogram.bin_edges.len() - 1 {
            let mut rec = vec![
                self.histogram.bin_edges[b].to_string(),
                self.histogram.bin_edges[b + 1].to_string(),
            ];
            rec.extend(self.histogram.densities.values().map(|d| d[b].to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        files.push("amount_hist.csv".into());

        let mut w = csv::Writer::from_path(dir.join("time_dependency.csv"))?;
        w.write_record(["dataset", "user", "minutes_since_last", "amount"])?;
        for (label, points) in &self.time_dependency {
            for p in points {
                w.write_record([
                    label.clone(),
                    p.user.clone(),
                    p.minutes_since_last.to_string(),
                    p.amount.map_or(String::new(), |a| a.to_string()),
                ])?;
            }
        }
        w.flush()?;
        files.push("time_dependency.csv".into());

        let amount_histogram_tvd: IndexMap<String, f64> = (0..self.runs)
            .map(|i| {
                let l = run_label(i);
                let t = self.histogram.tvd(REAL_LABEL, &l).unwrap_or(f64::NAN);
                (l, t)
            })
            .collect();
        let summary = Summary {
            runs: self.runs,
            histogram_bins: self.histogram.bin_edges.len() - 1,
            marginal_tvd: self.marginals.iter().map(|m| (m.column.as_str(), m.tvd)).collect(),
            location_top_tvd: table_tvd(&self.location),
            mcc_top_tvd: table_tvd(&self.mcc),
            amount_histogram_tvd_mean: amount_histogram_tvd.values().sum::<f64>() / self.runs as f64,
            amount_histogram_tvd,
        };
        fs::write(dir.join("summary.json"), serde_json::to_vec_pretty(&summary)?)?;
        files.push("summary.json".into());
        Ok(files)
    }
}

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    confusion_metrics, mix_dataset, train_test_split, CategoricalMode, ConfusionReport, DetectorError,
    FraudMixSpec, GbdtConfig, GbdtModel, LabeledTable, Preset, DEFAULT_THRESHOLD,
};
use crate::data_model::SequenceDataset;
use crate::seed::derive_nth;

pub const DEFAULT_RATIOS: [f64; 5] = [0.01, 0.05, 0.10, 0.20, 0.50];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepOptions {
    pub ratios: Vec<f64>,
    pub seeds: usize,
    pub total_rows: usize,
    pub train_fraction: f64,
    pub threshold: f64,
    pub modes: Vec<CategoricalMode>,
    pub seed: u64,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions {
            ratios: DEFAULT_RATIOS.to_vec(),
            seeds: 20,
            total_rows: 10_000,
            train_fraction: 0.8,
            threshold: DEFAULT_THRESHOLD,
            modes: vec![CategoricalMode::Native, CategoricalMode::Ordinal],
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub preset: String,
    pub mode: CategoricalMode,
    pub ratio: f64,
    pub seed: usize,
    pub report: ConfusionReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummaryRow {
    pub preset: String,
    pub mode: CategoricalMode,
    pub ratio: f64,
    pub seeds: usize,
    /// Means over the seeds where the rate is defined; NaN if none.
    pub mean_fpr: f64,
    pub mean_fnr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub options: SweepOptions,
    pub presets: Vec<Preset>,
    pub cells: Vec<SweepCell>,
    pub summary: Vec<SweepSummaryRow>,
}

fn mean_defined(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values
        .filter(|v| !v.is_nan())
        .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

/// Mixes, splits, fits and scores on `eval_real` for every ratio, seed,
/// preset and categorical mode. Each preset is run once per mode with its
/// categorical handling overridden.
pub fn ratio_seed_sweep(
    fraud_pool: &SequenceDataset,
    nonfraud_pool: &SequenceDataset,
    eval_real: &LabeledTable,
    presets: &[Preset],
    options: &SweepOptions,
) -> Result<SweepReport, DetectorError> {
    if options.seeds == 0 || options.ratios.is_empty() || options.modes.is_empty() || presets.is_empty() {
        return Err(DetectorError::InvalidConfig(
            "sweep needs at least one ratio, seed, mode and preset".into(),
        ));
    }
    for p in presets {
        p.config.validate()?;
    }
    let grid: Vec<(usize, usize)> = (0..options.ratios.len())
        .flat_map(|r| (0..options.seeds).map(move |s| (r, s)))
        .collect();
    let nested = grid
        .par_iter()
        .map(|&(r, s)| {
            let ratio = options.ratios[r];
            let cell_seed = derive_nth(derive_nth(options.seed, r as u64), s as u64);
            let spec = FraudMixSpec {
                total_rows: options.total_rows,
                fraud_fraction: ratio,
                seed: cell_seed,
            };
            let mixed = mix_dataset(fraud_pool, nonfraud_pool, &spec)?;
            let (train, _holdout) = train_test_split(&mixed, options.train_fraction, cell_seed ^ 1)?;
            let mut cells = Vec::new();
            for preset in presets {
                for &mode in &options.modes {
                    let config = GbdtConfig {
                        categorical_mode: mode,
                        seed: preset.config.seed.wrapping_add(s as u64),
                        ..preset.config.clone()
                    };
                    let model = GbdtModel::fit(&train, &config)?;
                    let probs = model.predict_table(eval_real)?;
                    cells.push(SweepCell {
                        preset: preset.name.clone(),
                        mode,
                        ratio,
                        seed: s,
                        report: confusion_metrics(&eval_real.labels, &probs, options.threshold)?,
                    });
                }
            }
            Ok(cells)
        })
        .collect::<Result<Vec<Vec<SweepCell>>, DetectorError>>()?;
    let cells: Vec<SweepCell> = nested.into_iter().flatten().collect();

    let mut summary = Vec::new();
    for preset in presets {
        for &mode in &options.modes {
            for &ratio in &options.ratios {
                let group: Vec<&SweepCell> = cells
                    .iter()
                    .filter(|c| c.preset == preset.name && c.mode == mode && c.ratio == ratio)
                    .collect();
                summary.push(SweepSummaryRow {
                    preset: preset.name.clone(),
                    mode,
                    ratio,
                    seeds: group.len(),
                    mean_fpr: mean_defined(group.iter().map(|c| c.report.fpr)),
                    mean_fnr: mean_defined(group.iter().map(|c| c.report.fnr)),
                });
            }
        }
    }
    Ok(SweepReport {
        options: options.clone(),
        presets: presets.to_vec(),
        cells,
        summary,
    })
}

fn rate(x: f64) -> String {
    if x.is_nan() {
        "NaN".into()
    } else {
        x.to_string()
    }
}

impl SweepReport {
    /// Writes `sweep.csv` and `sweep_summary.csv` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<Vec<String>, DetectorError> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let mut w = csv::Writer::from_path(dir.join("sweep.csv"))?;
        w.write_record([
            "preset",
            "categorical_mode",
            "ratio",
            "seed",
            "tp",
            "fp",
            "tn",
            "fn",
            "fpr",
            "fnr",
        ])?;
        for c in &self.cells {
            let r = &c.report;
            w.write_record([
                c.preset.clone(),
                c.mode.as_str().into(),
                c.ratio.to_string(),
                c.seed.to_string(),
                r.tp.to_string(),
                r.fp.to_string(),
                r.tn.to_string(),
                r.fn_.to_string(),
                rate(r.fpr),
                rate(r.fnr),
            ])?;
        }
        w.flush()?;
        let mut w = csv::Writer::from_path(dir.join("sweep_summary.csv"))?;
        w.write_record(["preset", "categorical_mode", "ratio", "seeds", "mean_fpr", "mean_fnr"])?;
        for s in &self.summary {
            w.write_record([
                s.preset.clone(),
                s.mode.as_str().into(),
                s.ratio.to_string(),
                s.seeds.to_string(),
                rate(s.mean_fpr),
                rate(s.mean_fnr),
            ])?;
        }
        w.flush()?;
        Ok(vec!["sweep.csv".into(), "sweep_summary.csv".into()])
    }
}

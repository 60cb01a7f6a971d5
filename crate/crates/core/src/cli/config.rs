use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::manifest::RunManifest;
use super::CliError;
use crate::cpar::CparConfig;
use crate::data_model::{AmountModel, FixtureConfig};
use crate::detector::{default_presets, CategoricalMode, Preset, SweepOptions, DEFAULT_RATIOS};
use crate::fidelity::FidelityOptions;

/// Network and optimizer settings. The training seed is derived from the
/// run seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CparSection {
    pub hidden_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub max_sequence_length: usize,
    pub context_columns: Vec<String>,
}

impl Default for CparSection {
    fn default() -> Self {
        let c = CparConfig::default();
        CparSection {
            hidden_size: c.hidden_size,
            epochs: c.epochs,
            learning_rate: c.learning_rate,
            max_sequence_length: c.max_sequence_length,
            context_columns: c.context_columns,
        }
    }
}

impl CparSection {
    pub fn to_config(&self, seed: u64) -> CparConfig {
        CparConfig {
            hidden_size: self.hidden_size,
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            seed,
            max_sequence_length: self.max_sequence_length,
            context_columns: self.context_columns.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleSection {
    pub runs: usize,
    /// Let the model choose sequence lengths instead of copying the training
    /// lengths.
    pub model_lengths: bool,
}

impl Default for SampleSection {
    fn default() -> Self {
        SampleSection {
            runs: 20,
            model_lengths: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorSection {
    /// Fraud rows oversampled from the fraud-only model.
    pub fraud_rows: usize,
    /// Epochs for the fraud-only model; the main epoch count when unset.
    pub fraud_epochs: Option<usize>,
    pub presets: Vec<String>,
    /// Overrides the boosting rounds of every preset.
    pub rounds: Option<usize>,
    pub ratios: Vec<f64>,
    pub seeds: usize,
    pub total_rows: usize,
    pub train_fraction: f64,
    pub threshold: f64,
    pub modes: Vec<CategoricalMode>,
    /// Share of the original rows used as the evaluation set, drawn
    /// stratified; 1 uses all of them.
    pub eval_fraction: f64,
}

impl Default for DetectorSection {
    fn default() -> Self {
        DetectorSection {
            fraud_rows: 15_000,
            fraud_epochs: None,
            presets: default_presets().into_iter().map(|p| p.name).collect(),
            rounds: None,
            ratios: DEFAULT_RATIOS.to_vec(),
            seeds: 20,
            total_rows: 10_000,
            train_fraction: 0.8,
            threshold: 0.5,
            modes: vec![CategoricalMode::Native, CategoricalMode::Ordinal],
            eval_fraction: 1.0,
        }
    }
}

impl DetectorSection {
    pub fn presets(&self) -> Result<Vec<Preset>, CliError> {
        let known = default_presets();
        self.presets
            .iter()
            .map(|name| {
                let mut p = known
                    .iter()
                    .find(|p| &p.name == name)
                    .cloned()
                    .ok_or_else(|| CliError::Config(format!("unknown preset {name:?}")))?;
                if let Some(r) = self.rounds {
                    p.config.rounds = r;
                }
                Ok(p)
            })
            .collect()
    }

    pub fn sweep_options(&self, seed: u64) -> SweepOptions {
        SweepOptions {
            ratios: self.ratios.clone(),
            seeds: self.seeds,
            total_rows: self.total_rows,
            train_fraction: self.train_fraction,
            threshold: self.threshold,
            modes: self.modes.clone(),
            seed,
        }
    }
}

/// Shape of the synthetic raw export written by `fixture`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FixtureSection {
    pub users: usize,
    pub rows_per_user: usize,
    pub fraud_rate: f64,
    pub use_chip_probs: [f64; 3],
    pub error_rate: f64,
    pub merchants_per_user: usize,
    pub amount: AmountModel,
}

impl Default for FixtureSection {
    fn default() -> Self {
        let f = FixtureConfig::default();
        FixtureSection {
            users: f.users,
            rows_per_user: f.rows_per_user,
            fraud_rate: f.fraud_rate,
            use_chip_probs: f.use_chip_probs,
            error_rate: f.error_rate,
            merchants_per_user: f.merchants_per_user,
            amount: f.amount,
        }
    }
}

impl FixtureSection {
    pub fn to_config(&self, seed: u64) -> FixtureConfig {
        FixtureConfig {
            seed,
            users: self.users,
            rows_per_user: self.rows_per_user,
            fraud_rate: self.fraud_rate,
            use_chip_probs: self.use_chip_probs,
            error_rate: self.error_rate,
            merchants_per_user: self.merchants_per_user,
            amount: self.amount,
        }
    }
}

fn default_schema() -> u8 {
    3
}

/// One run's settings. Relative paths are resolved against the directory of
/// the config file when it is loaded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Raw transaction CSV. When unset, `raw.csv` in the output directory
    /// (as written by `fixture`) is used.
    #[serde(default)]
    pub input: Option<PathBuf>,
    #[serde(default = "default_schema")]
    pub schema: u8,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub cpar: CparSection,
    #[serde(default)]
    pub sample: SampleSection,
    #[serde(default)]
    pub fidelity: FidelityOptions,
    #[serde(default)]
    pub detector: DetectorSection,
    #[serde(default)]
    pub fixture: FixtureSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            input: None,
            schema: default_schema(),
            seed: 0,
            out: None,
            cpar: CparSection::default(),
            sample: SampleSection::default(),
            fidelity: FidelityOptions::default(),
            detector: DetectorSection::default(),
            fixture: FixtureSection::default(),
        }
    }
}

impl RunConfig {
    /// Reads a TOML config, or the config snapshot inside a `manifest.json`.
    pub fn load(path: impl AsRef<Path>) -> Result<RunConfig, CliError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut config = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str::<RunManifest>(&text)
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
                .config
        } else {
            toml::from_str::<RunConfig>(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
        };
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut Option<PathBuf>| {
            if let Some(p) = p {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        };
        resolve(&mut config.input);
        resolve(&mut config.out);
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if !(1..=5).contains(&self.schema) {
            return bad(format!("schema must be 1-5, got {}", self.schema));
        }
        if self.sample.runs == 0 {
            return bad("sample.runs must be at least 1".into());
        }
        self.cpar
            .to_config(0)
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        if !(self.detector.eval_fraction > 0.0 && self.detector.eval_fraction <= 1.0) {
            return bad("detector.eval_fraction must be in (0, 1]".into());
        }
        self.detector.presets()?;
        if let Some(input) = &self.input {
            if !input.exists() {
                return bad(format!("input {} does not exist", input.display()));
            }
        }
        Ok(())
    }
}

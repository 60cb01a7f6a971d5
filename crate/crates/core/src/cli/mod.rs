//! Command-line pipeline: `fixture → preprocess → train → sample → decode →
//! fidelity / sweep`, handing off through files in one run directory.

mod config;
mod manifest;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, ValueEnum};
use indexmap::IndexMap;
use serde::Serialize;
use thiserror::Error;

pub use config::{CparSection, DetectorSection, FixtureSection, RunConfig, SampleSection};
pub use manifest::{sha256_file, RunManifest, StageRecord, MANIFEST_FILE};

use crate::cpar::{train, write_loss_curve, CparError, CparModel};
use crate::data_model::{generate_fixture_with, read_csv, write_csv, CellValue, DataError, SequenceDataset, TableMetadata};
use crate::detector::{labeled_table, oversample_fraud, ratio_seed_sweep, train_test_split, DetectorError, LABEL_COLUMN};
use crate::fidelity::{fidelity_bundle, run_label, FidelityError};
use crate::seed::{derive, derive_nth};
use crate::transforms::{build_schema, encoded_fraud_token, FittedPipeline, TransformError};

pub const RAW_FILE: &str = "raw.csv";
pub const TRANSFORMED_FILE: &str = "transformed.csv";
pub const PIPELINE_FILE: &str = "pipeline.json";
pub const MODEL_FILE: &str = "model.json";
pub const LOSS_CURVE_FILE: &str = "loss_curve.csv";
pub const SYNTHETIC_DIR: &str = "synthetic";
pub const DECODED_DIR: &str = "decoded";
pub const FIDELITY_DIR: &str = "fidelity";
pub const SWEEP_DIR: &str = "sweep";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("missing artifact {0}; run the upstream command first")]
    MissingArtifact(PathBuf),
    #[error("checkpoint fingerprint {found} does not match pipeline fingerprint {expected}")]
    FingerprintMismatch { expected: String, found: String },
    #[error("the preprocessed data has no fraud rows to train the fraud model on")]
    NoFraudRows,
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Transform(#[from] TransformError),
    #[error(transparent)]
    Cpar(#[from] CparError),
    #[error(transparent)]
    Fidelity(#[from] FidelityError),
    #[error(transparent)]
    Detector(#[from] DetectorError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::MissingArtifact(_) => "missing_artifact",
            CliError::FingerprintMismatch { .. } => "fingerprint_mismatch",
            CliError::NoFraudRows => "no_fraud_rows",
            CliError::Data(_) => "data",
            CliError::Transform(_) => "transform",
            CliError::Cpar(_) => "cpar",
            CliError::Fidelity(_) => "fidelity",
            CliError::Detector(_) => "detector",
            CliError::Io(_) => "io",
            CliError::Json(_) => "json",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Command {
    Preprocess,
    Train,
    Sample,
    Decode,
    Fidelity,
    Sweep,
    Fixture,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Preprocess => "preprocess",
            Command::Train => "train",
            Command::Sample => "sample",
            Command::Decode => "decode",
            Command::Fidelity => "fidelity",
            Command::Sweep => "sweep",
            Command::Fixture => "fixture",
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "seqsynth", version, about = "Synthetic transaction sequences and their evaluation")]
pub struct Args {
    #[arg(value_enum)]
    pub command: Command,
    /// TOML run config, or a manifest.json from an earlier run.
    #[arg(long)]
    pub config: PathBuf,
    /// Run directory; overrides `out` in the config.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Global seed; overrides `seed` in the config.
    #[arg(long)]
    pub seed: Option<u64>,
}

/// A resolved run: validated config plus its output directory.
#[derive(Debug, Clone)]
pub struct Run {
    pub config: RunConfig,
    pub out: PathBuf,
}

impl Run {
    pub fn new(mut config: RunConfig, out: Option<PathBuf>, seed: Option<u64>) -> Result<Run, CliError> {
        if let Some(s) = seed {
            config.seed = s;
        }
        let out = out
            .or_else(|| config.out.clone())
            .ok_or_else(|| CliError::Config("no output directory: set `out` or pass --out".into()))?;
        config.validate()?;
        Ok(Run { config, out })
    }

    pub fn from_args(args: &Args) -> Result<Run, CliError> {
        Run::new(RunConfig::load(&args.config)?, args.out.clone(), args.seed)
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn input(&self) -> PathBuf {
        self.config.input.clone().unwrap_or_else(|| self.path(RAW_FILE))
    }

    fn require(&self, path: PathBuf) -> Result<PathBuf, CliError> {
        if path.exists() {
            Ok(path)
        } else {
            Err(CliError::MissingArtifact(path))
        }
    }

    fn run_file(&self, dir: &str, i: usize) -> PathBuf {
        self.out.join(dir).join(format!("{}.csv", run_label(i)))
    }

    fn read_raw(&self) -> Result<SequenceDataset, CliError> {
        Ok(read_csv(self.require(self.input())?, &TableMetadata::transactions())?)
    }

    fn pipeline(&self) -> Result<FittedPipeline, CliError> {
        Ok(FittedPipeline::load(self.require(self.path(PIPELINE_FILE))?)?)
    }

    fn transformed(&self, pipeline: &FittedPipeline) -> Result<SequenceDataset, CliError> {
        Ok(read_csv(self.require(self.path(TRANSFORMED_FILE))?, &pipeline.target_metadata)?)
    }

    /// Loads the checkpoint and checks it was trained on this pipeline's
    /// output.
    fn model(&self, pipeline: &FittedPipeline) -> Result<CparModel, CliError> {
        let model = CparModel::load(self.require(self.path(MODEL_FILE))?)?;
        let expected = pipeline.target_metadata.fingerprint();
        let found = model.metadata_fingerprint();
        if expected != found {
            return Err(CliError::FingerprintMismatch { expected, found });
        }
        Ok(model)
    }

    /// Decoded runs mapped into the normalized comparison space.
    fn decoded_runs(&self, normalize: &FittedPipeline) -> Result<Vec<SequenceDataset>, CliError> {
        (0..self.config.sample.runs)
            .map(|i| {
                let d = read_csv(self.require(self.run_file(DECODED_DIR, i))?, &TableMetadata::transactions())?;
                Ok(normalize.apply(&d)?)
            })
            .collect()
    }
}

/// What one command did, for the manifest and the caller.
#[derive(Debug, Clone, Default)]
pub struct StageOutput {
    pub seeds: IndexMap<String, u64>,
    /// Paths relative to the run directory.
    pub artifacts: Vec<String>,
    pub summary: Vec<String>,
}

fn rel(run: &Run, path: &Path) -> String {
    path.strip_prefix(&run.out)
        .unwrap_or(path)
        .to_string_lossy()
        .replace('\\', "/")
}

fn cmd_fixture(run: &Run) -> Result<StageOutput, CliError> {
    let seed = derive(run.config.seed, "fixture");
    let data = generate_fixture_with(&run.config.fixture.to_config(seed));
    let path = run.path(RAW_FILE);
    write_csv(&data, &path)?;
    Ok(StageOutput {
        seeds: [("fixture".to_string(), seed)].into(),
        artifacts: vec![rel(run, &path)],
        summary: vec![format!(
            "{} rows over {} users",
            data.row_count(),
            data.sequences.len()
        )],
    })
}

fn cmd_preprocess(run: &Run) -> Result<StageOutput, CliError> {
    let raw = run.read_raw()?;
    let pipeline = build_schema(run.config.schema, &raw)?;
    let data = pipeline.apply(&raw)?;
    write_csv(&data, run.path(TRANSFORMED_FILE))?;
    pipeline.save(run.path(PIPELINE_FILE))?;
    let summary = pipeline
        .target_metadata
        .columns
        .iter()
        .map(|c| {
            let kind = serde_json::to_value(c.kind).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
            if c.vocabulary.is_empty() {
                format!("{}\t{kind}", c.name)
            } else {
                format!("{}\t{kind}\t{} categories", c.name, c.vocabulary.len())
            }
        })
        .collect();
    Ok(StageOutput {
        seeds: IndexMap::new(),
        artifacts: vec![TRANSFORMED_FILE.into(), PIPELINE_FILE.into()],
        summary,
    })
}

fn cmd_train(run: &Run) -> Result<StageOutput, CliError> {
    let pipeline = run.pipeline()?;
    let data = run.transformed(&pipeline)?;
    let seed = derive(run.config.seed, "train");
    let (model, report) = train(&data, &run.config.cpar.to_config(seed))?;
    model.save(run.path(MODEL_FILE))?;
    write_loss_curve(run.path(LOSS_CURVE_FILE), &report.loss_curve)?;
    let first = report.loss_curve.first().copied().unwrap_or(f64::NAN);
    let last = report.loss_curve.last().copied().unwrap_or(f64::NAN);
    Ok(StageOutput {
        seeds: [("train".to_string(), seed)].into(),
        artifacts: vec![MODEL_FILE.into(), LOSS_CURVE_FILE.into()],
        summary: vec![format!("{} updates, loss {first:.4} -> {last:.4}", report.updates)],
    })
}

fn cmd_sample(run: &Run) -> Result<StageOutput, CliError> {
    let pipeline = run.pipeline()?;
    let model = run.model(&pipeline)?;
    let template = run.transformed(&pipeline)?;
    fs::create_dir_all(run.out.join(SYNTHETIC_DIR))?;
    let base = derive(run.config.seed, "sample");
    let mut out = StageOutput::default();
    for i in 0..run.config.sample.runs {
        let seed = derive_nth(base, i as u64);
        let synthetic = model.sample_like(&template, run.config.sample.model_lengths, seed)?;
        let path = run.run_file(SYNTHETIC_DIR, i);
        write_csv(&synthetic, &path)?;
        out.seeds.insert(run_label(i), seed);
        out.artifacts.push(rel(run, &path));
    }
    out.summary.push(format!("{} runs sampled", run.config.sample.runs));
    Ok(out)
}

fn cmd_decode(run: &Run) -> Result<StageOutput, CliError> {
    let pipeline = run.pipeline()?;
    // the checkpoint is only read to confirm it matches the pipeline
    run.model(&pipeline)?;
    fs::create_dir_all(run.out.join(DECODED_DIR))?;
    let mut out = StageOutput::default();
    for i in 0..run.config.sample.runs {
        let synthetic = read_csv(run.require(run.run_file(SYNTHETIC_DIR, i))?, &pipeline.target_metadata)?;
        let decoded = pipeline.invert(&synthetic)?;
        let path = run.run_file(DECODED_DIR, i);
        write_csv(&decoded, &path)?;
        out.artifacts.push(rel(run, &path));
    }
    out.summary.push(format!("{} runs decoded", run.config.sample.runs));
    Ok(out)
}

fn cmd_fidelity(run: &Run) -> Result<StageOutput, CliError> {
    let raw = run.read_raw()?;
    let normalize = build_schema(1, &raw)?;
    let real = normalize.apply(&raw)?;
    let runs = run.decoded_runs(&normalize)?;
    let bundle = fidelity_bundle(&real, &runs, &run.config.fidelity)?;
    let dir = run.out.join(FIDELITY_DIR);
    let files = bundle.write(&dir)?;
    let summary = bundle
        .marginals
        .iter()
        .map(|m| format!("{} marginal TVD {:.4}", m.column, m.tvd))
        .collect();
    Ok(StageOutput {
        seeds: IndexMap::new(),
        artifacts: files.iter().map(|f| rel(run, &dir.join(f))).collect(),
        summary,
    })
}

/// Gives every sequence a distinct key so `time_diff` never mixes rows from
/// different sampled sequences of the same user.
fn distinct_keys(data: &mut SequenceDataset, tag: &str) {
    let pos = data.metadata.key_position();
    for (i, seq) in data.sequences.iter_mut().enumerate() {
        seq.key = format!("{}#{tag}{i}", seq.key);
        for row in &mut seq.rows {
            row[pos] = CellValue::Category(seq.key.clone());
        }
    }
}

fn cmd_sweep(run: &Run) -> Result<StageOutput, CliError> {
    let cfg = &run.config;
    let raw = run.read_raw()?;
    let normalize = build_schema(1, &raw)?;
    let real = normalize.apply(&raw)?;
    let pipeline = run.pipeline()?;
    let data = run.transformed(&pipeline)?;
    let mut out = StageOutput::default();
    let dir = run.out.join(SWEEP_DIR);
    fs::create_dir_all(&dir)?;

    // fraud-only sub-sequences of the preprocessed data
    let token = encoded_fraud_token(&pipeline);
    let label = data
        .metadata
        .index_of(LABEL_COLUMN)
        .ok_or_else(|| CliError::Config(format!("schema output lacks {LABEL_COLUMN:?}")))?;
    let fraud_only = data.filter_rows(|r| r[label].as_category() == Some(token.as_str()));
    if fraud_only.row_count() == 0 {
        return Err(CliError::NoFraudRows);
    }
    let fraud_seed = derive(cfg.seed, "fraud-train");
    let mut fraud_config = cfg.cpar.to_config(fraud_seed);
    if let Some(e) = cfg.detector.fraud_epochs {
        fraud_config.epochs = e;
    }
    let (fraud_model, _) = train(&fraud_only, &fraud_config)?;
    let oversample_seed = derive(cfg.seed, "fraud-sample");
    let sampled = oversample_fraud(&fraud_model, &fraud_only, cfg.detector.fraud_rows, &token, oversample_seed)?;
    let decoded = pipeline.invert(&sampled)?;
    write_csv(&decoded, dir.join("fraud_pool.csv"))?;
    out.artifacts.push(format!("{SWEEP_DIR}/fraud_pool.csv"));
    let mut fraud_pool = normalize.apply(&decoded)?;
    distinct_keys(&mut fraud_pool, "f");

    let mut nonfraud_pool = SequenceDataset::new(real.metadata.clone());
    for (i, mut d) in run.decoded_runs(&normalize)?.into_iter().enumerate() {
        distinct_keys(&mut d, &format!("r{i}."));
        nonfraud_pool.sequences.extend(d.sequences);
    }

    let eval_seed = derive(cfg.seed, "eval");
    let mut eval = labeled_table(&real)?;
    if cfg.detector.eval_fraction < 1.0 {
        eval = train_test_split(&eval, cfg.detector.eval_fraction, eval_seed)?.0;
    }
    let sweep_seed = derive(cfg.seed, "sweep");
    let presets = cfg.detector.presets()?;
    let report = ratio_seed_sweep(
        &fraud_pool,
        &nonfraud_pool,
        &eval,
        &presets,
        &cfg.detector.sweep_options(sweep_seed),
    )?;
    for f in report.write(&dir)? {
        out.artifacts.push(format!("{SWEEP_DIR}/{f}"));
    }
    out.seeds.extend([
        ("fraud-train".to_string(), fraud_seed),
        ("fraud-sample".to_string(), oversample_seed),
        ("eval".to_string(), eval_seed),
        ("sweep".to_string(), sweep_seed),
    ]);
    for s in &report.summary {
        out.summary.push(format!(
            "{} {} ratio {}: mean fpr {:.4}, mean fnr {:.4}",
            s.preset,
            s.mode.as_str(),
            s.ratio,
            s.mean_fpr,
            s.mean_fnr
        ));
    }
    Ok(out)
}

/// Runs one command and records it in the run manifest.
pub fn execute(command: Command, run: &Run) -> Result<StageOutput, CliError> {
    fs::create_dir_all(&run.out)?;
    let start = Instant::now();
    let output = match command {
        Command::Fixture => cmd_fixture(run),
        Command::Preprocess => cmd_preprocess(run),
        Command::Train => cmd_train(run),
        Command::Sample => cmd_sample(run),
        Command::Decode => cmd_decode(run),
        Command::Fidelity => cmd_fidelity(run),
        Command::Sweep => cmd_sweep(run),
    }?;
    let mut manifest = RunManifest::open(&run.out, &run.config);
    let artifacts = output
        .artifacts
        .iter()
        .map(|a| Ok((a.clone(), sha256_file(&run.out.join(a))?)))
        .collect::<Result<_, CliError>>()?;
    manifest.stages.insert(
        command.name().to_string(),
        StageRecord {
            seeds: output.seeds.clone(),
            elapsed_ms: start.elapsed().as_millis(),
            artifacts,
        },
    );
    manifest.write(&run.out)?;
    Ok(output)
}

#[derive(Serialize)]
struct ErrorLine<'a> {
    error: &'a str,
    command: &'a str,
    message: String,
}

/// Parses arguments, runs the command and returns the process exit code.
/// Failures print one JSON object on stderr.
pub fn main_with_args(args: impl IntoIterator<Item = impl Into<OsString> + Clone>) -> i32 {
    let args = match Args::try_parse_from(args) {
        Ok(a) => a,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    let result = Run::from_args(&args).and_then(|run| execute(args.command, &run));
    match result {
        Ok(output) => {
            for line in output.summary {
                println!("{line}");
            }
            0
        }
        Err(e) => {
            let line = ErrorLine {
                error: e.kind(),
                command: args.command.name(),
                message: e.to_string(),
            };
            eprintln!("{}", serde_json::to_string(&line).unwrap_or_else(|_| e.to_string()));
            e.exit_code()
        }
    }
}

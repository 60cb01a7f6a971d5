use std::fs;
use std::path::Path;
use std::process::Command as Process;

use seqsynth::cli::{execute, Command, Run, RunConfig, RunManifest, MANIFEST_FILE};
use seqsynth::data_model::{read_csv, TableMetadata};

const SMALL: &str = r#"
schema = 3
seed = 7

[cpar]
hidden_size = 8
epochs = 3

[sample]
runs = 2

[detector]
fraud_rows = 200
fraud_epochs = 2
rounds = 5
seeds = 2
total_rows = 400

[fixture]
users = 3
rows_per_user = 150
fraud_rate = 0.1
"#;

fn write_config(dir: &Path, text: &str) -> std::path::PathBuf {
    let path = dir.join("run.toml");
    fs::write(&path, text).unwrap();
    path
}

fn run_in(dir: &Path, text: &str) -> Run {
    let config = RunConfig::load(write_config(dir, text)).unwrap();
    Run::new(config, Some(dir.join("out")), None).unwrap()
}

fn pipeline(run: &Run, commands: &[Command]) {
    for &c in commands {
        execute(c, run).unwrap_or_else(|e| panic!("{}: {e}", c.name()));
    }
}

const ALL: [Command; 7] = [
    Command::Fixture,
    Command::Preprocess,
    Command::Train,
    Command::Sample,
    Command::Decode,
    Command::Fidelity,
    Command::Sweep,
];

#[test]
fn schema_two_merges_merchant_columns() {
    let dir = tempfile::tempdir().unwrap();
    let run = run_in(dir.path(), &SMALL.replace("schema = 3", "schema = 2"));
    pipeline(&run, &[Command::Fixture, Command::Preprocess]);
    let header = fs::read_to_string(run.out.join("transformed.csv")).unwrap();
    let header = header.lines().next().unwrap();
    assert!(header.contains("Location"));
    for gone in ["Merchant Name", "Merchant City", "Merchant State", "Zip"] {
        assert!(!header.contains(gone), "{header}");
    }
}

#[test]
fn preprocess_is_repeatable() {
    let dir = tempfile::tempdir().unwrap();
    let run = run_in(dir.path(), SMALL);
    pipeline(&run, &[Command::Fixture, Command::Preprocess]);
    let first = fs::read(run.out.join("transformed.csv")).unwrap();
    let pipe = fs::read(run.out.join("pipeline.json")).unwrap();
    execute(Command::Preprocess, &run).unwrap();
    assert_eq!(fs::read(run.out.join("transformed.csv")).unwrap(), first);
    assert_eq!(fs::read(run.out.join("pipeline.json")).unwrap(), pipe);
}

#[test]
fn full_pipeline_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let run = run_in(dir.path(), SMALL);
    pipeline(&run, &ALL);

    // sampling again with the same seed rewrites identical files
    let before = fs::read(run.out.join("synthetic/run_00.csv")).unwrap();
    execute(Command::Sample, &run).unwrap();
    assert_eq!(fs::read(run.out.join("synthetic/run_00.csv")).unwrap(), before);

    // decoded categories stay inside the original vocabulary
    let raw = read_csv(run.out.join("raw.csv"), &TableMetadata::transactions()).unwrap();
    let decoded = read_csv(run.out.join("decoded/run_01.csv"), &TableMetadata::transactions()).unwrap();
    for col in ["Use Chip", "MCC", "Errors?", "Merchant City"] {
        let i = raw.metadata.index_of(col).unwrap();
        let seen: std::collections::HashSet<String> = raw.rows().map(|r| format!("{:?}", r[i])).collect();
        assert!(decoded.rows().all(|r| seen.contains(&format!("{:?}", r[i]))), "{col}");
    }

    for f in ["marginals_is_fraud.csv", "marginals_user.csv", "marginals_use_chip.csv", "marginals_errors.csv"] {
        assert!(run.out.join("fidelity").join(f).exists(), "{f}");
    }
    let loc = fs::read_to_string(run.out.join("fidelity/location_top50.csv")).unwrap();
    assert_eq!(loc.lines().count(), 51);
    let mcc = fs::read_to_string(run.out.join("fidelity/mcc_top25.csv")).unwrap();
    assert!(mcc.lines().count() <= 26);

    let summary = fs::read_to_string(run.out.join("sweep/sweep_summary.csv")).unwrap();
    for ratio in ["0.01", "0.05", "0.1", "0.2", "0.5"] {
        assert!(summary.lines().any(|l| l.split(',').nth(2) == Some(ratio)), "{ratio}");
    }

    let manifest: RunManifest = serde_json::from_slice(&fs::read(run.out.join(MANIFEST_FILE)).unwrap()).unwrap();
    assert_eq!(manifest.stages.len(), 7);
    assert_eq!(manifest.config.seed, 7);
    assert!(manifest.stages["sample"].seeds.contains_key("run_01"));
}

#[test]
fn decode_rejects_a_foreign_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let run = run_in(dir.path(), SMALL);
    pipeline(&run, &[Command::Fixture, Command::Preprocess, Command::Train, Command::Sample]);
    let other_dir = tempfile::tempdir().unwrap();
    let other = run_in(other_dir.path(), &SMALL.replace("schema = 3", "schema = 4"));
    pipeline(&other, &[Command::Fixture, Command::Preprocess]);
    fs::copy(other.out.join("pipeline.json"), run.out.join("pipeline.json")).unwrap();
    let err = execute(Command::Decode, &run).unwrap_err();
    assert_eq!(err.kind(), "fingerprint_mismatch");
}

#[test]
fn binary_reports_errors_as_json() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &SMALL.replace("schema = 3", "schema = 9"));
    let out = Process::new(env!("CARGO_BIN_EXE_seqsynth"))
        .args(["preprocess", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(dir.path().join("out"))
        .output()
        .unwrap();
    assert_ne!(out.status.code(), Some(0));
    let line = String::from_utf8(out.stderr).unwrap();
    let v: serde_json::Value = serde_json::from_str(line.trim()).unwrap();
    assert_eq!(v["error"], "config");
    assert_eq!(v["command"], "preprocess");

    let config = write_config(dir.path(), SMALL);
    let ok = Process::new(env!("CARGO_BIN_EXE_seqsynth"))
        .args(["fixture", "--seed", "3", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(dir.path().join("out"))
        .status()
        .unwrap();
    assert!(ok.success());
    let manifest: RunManifest =
        serde_json::from_slice(&fs::read(dir.path().join("out").join(MANIFEST_FILE)).unwrap()).unwrap();
    assert_eq!(manifest.config.seed, 3);
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(dir.path(), "schema = 3\n[cpar]\nhiden_size = 8\n");
    assert_eq!(RunConfig::load(path).unwrap_err().kind(), "config");
}

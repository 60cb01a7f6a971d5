//! Runs every CLI stage in order from one config and lists the run
//! directory.

use seqsynth::cli::{execute, Command, Run, RunConfig};

const CONFIG: &str = r#"
schema = 5
seed = 3

[cpar]
hidden_size = 16
epochs = 10

[sample]
runs = 2

[detector]
fraud_rows = 200
fraud_epochs = 3
rounds = 20
seeds = 2
total_rows = 400

[fixture]
users = 3
rows_per_user = 150
fraud_rate = 0.1
"#;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join("seqsynth-e2e");
    std::fs::create_dir_all(&dir)?;
    let config_path = dir.join("run.toml");
    std::fs::write(&config_path, CONFIG)?;
    let run = Run::new(RunConfig::load(&config_path)?, Some(dir.join("out")), None)?;
    for command in [
        Command::Fixture,
        Command::Preprocess,
        Command::Train,
        Command::Sample,
        Command::Decode,
        Command::Fidelity,
        Command::Sweep,
    ] {
        let output = execute(command, &run)?;
        println!("{}: {}", command.name(), output.artifacts.join(", "));
    }
    println!("manifest: {}", run.out.join("manifest.json").display());
    Ok(())
}

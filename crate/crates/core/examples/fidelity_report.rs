//! Builds the full fidelity bundle for a few synthetic runs and writes the
//! CSV and JSON reports.

use seqsynth::cpar::{train, CparConfig};
use seqsynth::data_model::generate_fixture_dataset;
use seqsynth::fidelity::{fidelity_bundle, FidelityOptions};
use seqsynth::transforms::build_schema;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let raw = generate_fixture_dataset(1, 3, 120);
    let normalize = build_schema(1, &raw)?;
    let pipeline = build_schema(3, &raw)?;
    let data = pipeline.apply(&raw)?;
    let (model, _) = train(&data, &CparConfig { hidden_size: 16, epochs: 30, learning_rate: 5e-3, ..Default::default() })?;

    let runs = (0..3)
        .map(|seed| Ok(normalize.apply(&pipeline.invert(&model.sample_like(&data, false, seed)?)?)?))
        .collect::<Result<Vec<_>, Box<dyn std::error::Error>>>()?;
    let bundle = fidelity_bundle(&normalize.apply(&raw)?, &runs, &FidelityOptions::default())?;
    for m in &bundle.marginals {
        println!("{:<10} TVD {:.4}", m.column, m.tvd);
    }
    println!("amount histogram TVD run_00: {:.4}", bundle.histogram.tvd("original", "run_00").unwrap());

    let dir = std::env::temp_dir().join("seqsynth-fidelity");
    let files = bundle.write(&dir)?;
    println!("wrote {} files to {}", files.len(), dir.display());
    Ok(())
}

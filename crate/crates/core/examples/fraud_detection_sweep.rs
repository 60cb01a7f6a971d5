//! Mixes fraud and non-fraud rows at the five ratios, trains the boosted
//! tree presets under both categorical modes and prints mean error rates on
//! a held-out real table.

use seqsynth::data_model::{generate_fixture_with, FixtureConfig};
use seqsynth::detector::{labeled_table, default_presets, ratio_seed_sweep, SweepOptions};
use seqsynth::transforms::build_schema;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let fixture = |seed| FixtureConfig { seed, users: 10, rows_per_user: 300, fraud_rate: 0.3, ..Default::default() };
    let pool_raw = generate_fixture_with(&fixture(1));
    let real_raw = generate_fixture_with(&fixture(2));
    let pool = build_schema(1, &pool_raw)?.apply(&pool_raw)?;
    let real = build_schema(1, &real_raw)?.apply(&real_raw)?;

    let presets: Vec<_> = default_presets()
        .into_iter()
        .map(|mut p| {
            p.config.rounds = 60;
            p.config.learning_rate = 0.1;
            p
        })
        .collect();
    let options = SweepOptions { seeds: 2, total_rows: 1_000, ..Default::default() };
    let report = ratio_seed_sweep(&pool, &pool, &labeled_table(&real)?, &presets, &options)?;
    println!("{:<14} {:<8} {:>6} {:>9} {:>9}", "preset", "mode", "ratio", "mean fpr", "mean fnr");
    for s in &report.summary {
        println!(
            "{:<14} {:<8} {:>6} {:>9.4} {:>9.4}",
            s.preset,
            s.mode.as_str(),
            s.ratio,
            s.mean_fpr,
            s.mean_fnr
        );
    }
    Ok(())
}

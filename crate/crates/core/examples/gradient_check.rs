//! Compares the analytic loss gradient with central finite differences on a
//! tiny network.

use seqsynth::cpar::{gradient_check, CparConfig, CparModel};
use seqsynth::data_model::generate_fixture_dataset;
use seqsynth::transforms::build_schema;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let raw = generate_fixture_dataset(3, 2, 10);
    let data = build_schema(5, &raw)?.apply(&raw)?;
    for seed in 0..3 {
        let model = CparModel::new(&data, &CparConfig { hidden_size: 6, seed, ..Default::default() })?;
        let check = gradient_check(&model, &data)?;
        println!(
            "seed {seed}: {} parameters, max relative error {:.2e} (worst index {})",
            check.parameters, check.max_relative_error, check.worst_parameter
        );
    }
    Ok(())
}

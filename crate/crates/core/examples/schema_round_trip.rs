//! Fits each of the five preprocessing schemas, shows the transformed
//! columns of the first row and checks that inverting restores the input.

use seqsynth::data_model::{generate_fixture_dataset, CellValue};
use seqsynth::transforms::{build_schema, parse_amount};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let raw = generate_fixture_dataset(1, 3, 200);
    for schema in 1..=5 {
        let pipeline = build_schema(schema, &raw)?;
        let data = pipeline.apply(&raw)?;
        let back = pipeline.invert(&data)?;
        let amount = raw.metadata.index_of("Amount").expect("amount column");
        let mut other_mismatches = 0;
        let mut amount_error = 0.0f64;
        for (a, b) in raw.rows().zip(back.rows()) {
            let dollars = |r: &[CellValue]| parse_amount(r[amount].as_category().unwrap_or_default()).unwrap_or(f64::NAN);
            amount_error = amount_error.max((dollars(a) - dollars(b)).abs());
            other_mismatches += a.iter().zip(b).enumerate().filter(|(i, (x, y))| *i != amount && x != y).count();
        }
        println!(
            "schema {schema}: {} steps, {other_mismatches} mismatched cells outside Amount, max amount error {amount_error:.2e}",
            pipeline.steps.len()
        );
        for (spec, cell) in data.metadata.columns.iter().zip(&data.sequences[0].rows[0]) {
            println!("    {:<16} {cell:?}", spec.name);
        }
    }
    Ok(())
}

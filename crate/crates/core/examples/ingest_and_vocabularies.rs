//! Generates a raw transaction export, reads it back and prints the
//! per-user vocabulary sizes of every categorical column.

use seqsynth::data_model::{fit_vocabularies, generate_fixture_dataset, read_csv, write_csv, TableMetadata};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join("seqsynth-ingest");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("raw.csv");
    write_csv(&generate_fixture_dataset(1, 3, 200), &path)?;

    let data = read_csv(&path, &TableMetadata::transactions())?;
    println!("{} rows in {} sequences from {}", data.row_count(), data.sequences.len(), path.display());
    let (_, report) = fit_vocabularies(&data)?;
    println!("distinct values per user ({})", report.sequence_keys.join(", "));
    for (column, counts) in &report.per_sequence {
        println!("  {column:<16} {counts:?}");
    }
    Ok(())
}

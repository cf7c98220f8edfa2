//! Clean, encode and split the COMPAS file, then cache the test split.

use std::path::PathBuf;

use fairaudit::data::{ingest, save_dataset, DatasetSchema, IngestOptions};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let data = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data");
    let schema = DatasetSchema::load(&data.join("compas.schema.toml"))?;
    let (train, test, report) = ingest(&data.join("compas-scores-two-years.csv"), &schema, &IngestOptions::default())?;

    println!(
        "{} rows read, {} filtered, {} with missing values, {} kept",
        report.total_rows,
        report.filtered_rows,
        report.missing_rows,
        report.cleaned_rows()
    );
    println!("train {} / test {}", train.len(), test.len());
    println!("protected column: {} (index {})", train.protected_name(), train.protected_index);
    for (name, stats) in train.feature_names.iter().zip(&train.normalizer.features) {
        println!("  {name:<24} mean {:>8.3} std {:>8.3}", stats.mean, stats.std);
    }

    let out = std::env::temp_dir().join("compas-test.dataset");
    save_dataset(&test, &out)?;
    println!("test split cached at {}", out.display());
    Ok(())
}

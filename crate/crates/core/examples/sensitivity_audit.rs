//! Plain and smooth prediction sensitivity on COMPAS test rows.
//!
//! The plain value is the magnitude of the gradient with respect to the
//! protected column; the smooth value is its maximum over Gaussian
//! perturbations of the row.

use std::path::PathBuf;

use fairaudit::data::{ingest, DatasetSchema, IngestOptions};
use fairaudit::nn::{ModelSpec, TrainedModel};
use fairaudit::sensitivity::{smooth_prediction_sensitivity, smoothgrad_average, SensitivityConfig};
use fairaudit::train::{train, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let data = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data");
    let schema = DatasetSchema::load(&data.join("compas.schema.toml"))?;
    let (train_set, test, _) = ingest(&data.join("compas-scores-two-years.csv"), &schema, &IngestOptions::default())?;

    let config = TrainConfig {
        epochs: 10,
        ..TrainConfig::default()
    };
    let (model, _) = train(TrainedModel::build(ModelSpec::linear(train_set.input_dim(), 0))?, &train_set, &config)?;

    let cfg = SensitivityConfig::default();
    let a = test.protected_index;
    println!("{:>6} {:>8} {:>8} {:>8} {:>10}", "id", "p", "plain", "smooth", "smoothgrad");
    for i in 0..10 {
        let r = smooth_prediction_sensitivity(&model.network, test.example_ids[i], test.row(i), a, &cfg)?;
        let avg = smoothgrad_average(&model.network, test.example_ids[i], test.row(i), a, &cfg)?;
        println!(
            "{:>6} {:>8.4} {:>8.4} {:>8.4} {:>10.4}",
            r.example_id, r.prediction, r.plain, r.smooth, avg[a]
        );
    }
    Ok(())
}

//! Plain versus adversarially mitigated training on COMPAS.
//!
//! Prints the group statistics of both models and the mean signed gradient
//! with respect to the protected column. The adversary only sees the model's
//! output, so parity can be reached by pushing that gradient the other way;
//! the signed mean shows which way it went.

use std::path::PathBuf;

use fairaudit::data::{ingest, DatasetSchema, IngestOptions};
use fairaudit::metrics::{compute_group_metrics, threshold_predictions};
use fairaudit::nn::{ModelSpec, TrainedModel};
use fairaudit::sensitivity::input_gradients;
use fairaudit::train::{accuracy, train, train_mitigated, MitigationConfig, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let lambda: f64 = std::env::args().nth(1).map_or(Ok(1.0), |s| s.parse())?;
    let data = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data");
    let schema = DatasetSchema::load(&data.join("compas.schema.toml"))?;
    let (train_set, test, _) = ingest(&data.join("compas-scores-two-years.csv"), &schema, &IngestOptions::default())?;

    let spec = ModelSpec::linear(train_set.input_dim(), 3);
    let plain_cfg = TrainConfig {
        epochs: 20,
        seed: 5,
        ..TrainConfig::default()
    };
    let fair_cfg = TrainConfig {
        mitigation: Some(MitigationConfig {
            lambda,
            ..MitigationConfig::default()
        }),
        ..plain_cfg.clone()
    };
    let (plain, _) = train(TrainedModel::build(spec)?, &train_set, &plain_cfg)?;
    let (fair, _, log) = train_mitigated(
        TrainedModel::build(spec)?,
        TrainedModel::build(spec.adversary(4))?,
        &train_set,
        &fair_cfg,
    )?;
    let last = log.epochs.last().expect("epochs > 0");
    println!("lambda {lambda}: final adversary loss {:.4}", last.adversary_loss.unwrap_or(f64::NAN));

    let a = test.protected_index;
    for (name, m) in [("plain", &plain), ("mitigated", &fair)] {
        let p = m.predict_rows(&test.features)?;
        let r = compute_group_metrics(&threshold_predictions(&p, &test.labels, &test.privileged, 0.5)?)?;
        let (_, g) = input_gradients(&m.network, &test.features)?;
        let d = test.input_dim();
        let signed: f64 = (0..test.len()).map(|i| g.data()[i * d + a]).sum::<f64>() / test.len() as f64;
        println!(
            "{name:>9}: accuracy {:.3}, SPD {}, DI {}, mean dF/d{} {signed:+.4}",
            accuracy(m, &test)?,
            r.statistical_parity_difference,
            r.disparate_impact,
            test.protected_name()
        );
    }
    Ok(())
}

//! The full pipeline on COMPAS: both models, audits, proxy labels, ROC and a
//! manifest, written to a directory given on the command line.
//!
//! ```text
//! cargo run --release --example experiment -- /tmp/compas-run
//! ```

use std::path::PathBuf;

use fairaudit::eval::ScoreKind;
use fairaudit::experiment::{run_experiment, ExperimentConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("fairaudit-compas"));
    let data = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data");
    let config = ExperimentConfig::new(data.join("compas-scores-two-years.csv"), data.join("compas.schema.toml"));

    let bundle = run_experiment(&config, &out, true)?;
    println!("match {} / not match {}", bundle.labeling.matches, bundle.labeling.mismatches);
    for o in [&bundle.unmitigated, &bundle.mitigated] {
        let s = o.distribution(ScoreKind::Smooth);
        println!(
            "{:>11}: accuracy {:.3}, SPD {}, smooth mean fair {:.4} unfair {:.4}, AUC {}",
            o.name,
            o.test_accuracy,
            o.group_metrics.statistical_parity_difference,
            s.fair.mean.unwrap_or(f64::NAN),
            s.unfair.mean.unwrap_or(f64::NAN),
            o.roc(ScoreKind::Smooth).map_or("undefined".to_string(), |r| format!("{:.3}", r.auc)),
        );
    }
    println!("artifacts in {}", bundle.dir.display());
    Ok(())
}

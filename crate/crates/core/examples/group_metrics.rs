//! Group fairness statistics on a hand-built set of predictions.

use fairaudit::metrics::{compute_group_metrics, threshold_predictions};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // Probabilities, true labels and group membership for twelve people.
    let probs = [0.9, 0.8, 0.7, 0.6, 0.3, 0.2, 0.55, 0.4, 0.35, 0.2, 0.1, 0.05];
    let labels = [1, 1, 0, 1, 0, 0, 1, 1, 0, 1, 0, 0];
    let privileged = [true, true, true, true, true, true, false, false, false, false, false, false];

    let preds = threshold_predictions(&probs, &labels, &privileged, 0.5)?;
    let report = compute_group_metrics(&preds)?;
    print!("{}", report.to_text());

    let mut csv = Vec::new();
    report.write_csv(&mut csv)?;
    print!("{}", String::from_utf8(csv)?);
    Ok(())
}

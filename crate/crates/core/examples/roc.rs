//! Proxy fairness labels from model agreement, and the ROC of a score that is
//! meant to flag the disagreements.

use fairaudit::eval::{roc, sensitivity_distributions, ProxyLabeling, ScoreKind};
use fairaudit::sensitivity::SensitivityResult;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let ids: Vec<u64> = (0..8).collect();
    let unmitigated = [true, true, false, true, false, false, true, false];
    let mitigated = [true, false, false, true, true, false, false, false];
    let labeling = ProxyLabeling::from_predictions(&ids, &unmitigated, &mitigated)?;
    println!("match {} / not match {}", labeling.matches, labeling.mismatches);

    let smooth = [0.05, 0.40, 0.10, 0.12, 0.35, 0.02, 0.12, 0.08];
    let audits: Vec<SensitivityResult> = ids
        .iter()
        .zip(smooth)
        .map(|(&example_id, s)| SensitivityResult {
            example_id,
            prediction: 0.5,
            plain: s,
            smooth: s,
            per_sample: None,
        })
        .collect();

    let d = sensitivity_distributions(&labeling, &audits, ScoreKind::Smooth, 4)?;
    println!("fair mean {:?}, unfair mean {:?}", d.fair.mean, d.unfair.mean);

    let curve = roc(&labeling, &audits, ScoreKind::Smooth)?;
    for (fpr, tpr) in &curve.points {
        println!("fpr {fpr:.3} tpr {tpr:.3}");
    }
    println!("AUC {:.4}", curve.auc);
    Ok(())
}

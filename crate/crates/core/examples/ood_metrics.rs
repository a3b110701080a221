//! AUROC and FPR at 95% TPR for two overlapping score distributions.

use curation_ood::eval::{auroc, fpr_at_tpr, MetricsReport, ScoreKind, ScoreSet};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn main() -> curation_ood::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let inliers = Normal::new(0.0, 1.0).unwrap();
    for shift in [0.0, 1.0, 2.0, 4.0] {
        let outliers = Normal::new(shift, 1.0).unwrap();
        let a: Vec<f64> = (0..2000).map(|_| inliers.sample(&mut rng)).collect();
        let b: Vec<f64> = (0..2000).map(|_| outliers.sample(&mut rng)).collect();
        println!(
            "shift {shift}: AUROC {:.4}  FPR95 {:.4}",
            auroc(&a, &b)?,
            fpr_at_tpr(&a, &b, 95.0)?
        );
    }

    let a = ScoreSet::new("in", "demo", ScoreKind::UndefProb, vec![0.1, 0.2, 0.2, 0.4])?;
    let b = ScoreSet::new("far", "demo", ScoreKind::UndefProb, vec![0.2, 0.5, 0.9])?;
    let report = MetricsReport::compute(&a, &b, 95.0)?;
    println!("{}", serde_json::to_string_pretty(&report).unwrap());
    Ok(())
}

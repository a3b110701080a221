//! Curated label distribution for a few predictive distributions.

use curation_ood::curation::{enumeration_oracle, CuratedLogProbs};
use curation_ood::model::PredictiveDist;
use curation_ood::tensor::Tensor;

fn main() -> curation_ood::Result<()> {
    let rows = [[0.98, 0.02], [0.8, 0.2], [0.6, 0.4], [0.5, 0.5]];
    let log_p = Tensor::from_rows(&rows)?.map(f64::ln);
    let dist = PredictiveDist { log_p };

    for s in [1, 3, 10] {
        println!("S = {s}");
        for c in [0.0, 3f64.ln()] {
            let head = CuratedLogProbs::from_dist(&dist, s, c)?.probs_with_undef();
            for (i, p) in rows.iter().enumerate() {
                let r = head.row(i);
                println!(
                    "  c = {c:.3}  p = {:?}  ->  P(y=0) {:.4}  P(y=1) {:.4}  P(Undef) {:.4}",
                    p, r[0], r[1], r[2]
                );
            }
        }
    }

    let oracle = enumeration_oracle(&[0.6, 0.4], 2)?;
    println!("enumerating all 4 annotator pairs for p = (0.6, 0.4): {oracle:?}");
    println!("uniform bound for C = 2, S = 10: P(Undef) <= {:.6}", 1.0 - 2f64.powi(-9));
    Ok(())
}

//! Total, aleatoric and epistemic uncertainty of a small posterior ensemble.

use curation_ood::eval::decompose_members;
use curation_ood::tensor::Tensor;

fn main() -> curation_ood::Result<()> {
    let agree = Tensor::from_rows(&[[0.5, 0.5], [0.9, 0.1]])?;
    let members = [
        agree.clone(),
        agree.clone(),
        Tensor::from_rows(&[[0.5, 0.5], [0.1, 0.9]])?,
    ];
    let d = decompose_members(&members)?;
    for (i, label) in ["all members unsure", "members disagree"].iter().enumerate() {
        println!(
            "{label:20} total {:.4} = aleatoric {:.4} + epistemic {:.4}",
            d.total[i], d.aleatoric[i], d.epistemic[i]
        );
    }

    let split = decompose_members(&[Tensor::from_rows(&[[1.0, 0.0]])?, Tensor::from_rows(&[[0.0, 1.0]])?])?;
    println!(
        "confident but opposite: total {:.4}, aleatoric {:.4}, epistemic {:.4} (ln 2 = {:.4})",
        split.total[0],
        split.aleatoric[0],
        split.epistemic[0],
        std::f64::consts::LN_2
    );
    Ok(())
}

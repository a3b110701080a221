//! Cyclical SGLD on two moons: step-size schedule, snapshots and learned c.

use curation_ood::curation::CurationConfig;
use curation_ood::data::{make_moons, make_ring};
use curation_ood::model::MlpConfig;
use curation_ood::sampler::{csgld_stepsize, run_csgld, BatchSizes, CsgldConfig, CurationObjective};

fn main() -> curation_ood::Result<()> {
    let moons = make_moons(1000, 0.1, 0)?;
    let ring = make_ring(1000, 1.8, [0.5, 0.25], 0.1, 1)?;
    let model = MlpConfig::default();
    let objective = CurationObjective { model: model.clone(), curation: CurationConfig::default() };
    let cfg = CsgldConfig { epochs_per_cycle: 20, seed: 3, ..CsgldConfig::new(5e-5) };

    let batch = BatchSizes { inlier: 128, outlier: 128 };
    let per_cycle = cfg.epochs_per_cycle * moons.len().div_ceil(batch.inlier);
    println!("step size over one cycle of {per_cycle} steps:");
    for k in (0..=per_cycle).step_by(per_cycle / 8) {
        println!("  k = {k:4}  eps = {:.3e}", csgld_stepsize(k, per_cycle, cfg.initial_step));
    }

    let (ensemble, log) = run_csgld(&objective, model.init()?, &moons, Some(&ring), batch, &cfg)?;
    for e in log.epochs.iter().filter(|e| e.epoch % 5 == 4) {
        println!(
            "cycle {} epoch {:2}: loss {:.4}  c {:+.3}  noise {}",
            e.cycle, e.epoch, e.mean_loss, e.c, e.noise
        );
    }
    println!("{} snapshots:", ensemble.len());
    for s in &ensemble.samples {
        println!("  cycle {} epoch {}  |theta| = {:.3}", s.cycle, s.epoch, s.params.l2_norm());
    }
    Ok(())
}

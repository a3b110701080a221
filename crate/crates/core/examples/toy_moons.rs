//! Two moons with and without outlier exposure; prints P(Undef) over the plane.

use curation_ood::curation::CurationConfig;
use curation_ood::data::{feature_mean, make_moons, make_ring};
use curation_ood::eval::{heatmap_grid, Bounds, Heatmap};
use curation_ood::model::MlpConfig;
use curation_ood::sampler::{train_adam, AdamConfig, BatchSizes, CurationObjective, PosteriorEnsemble};

fn show(title: &str, map: &Heatmap) {
    println!("{title}");
    let shades = b" .:-=+*#%@";
    for r in (0..map.resolution).step_by(2) {
        let line: String = map
            .values
            .row(r)
            .iter()
            .map(|v| shades[((v * 10.0) as usize).min(9)] as char)
            .collect();
        println!("  {line}");
    }
}

fn main() -> curation_ood::Result<()> {
    let moons = make_moons(2000, 0.1, 0)?;
    let ring = make_ring(2000, 1.8, [0.5, 0.25], 0.1, 1)?;
    let model = MlpConfig::default();
    let adam = AdamConfig::default();
    let bounds = Bounds { x_min: -3.0, x_max: 4.0, y_min: -3.25, y_max: 3.75 };
    let centroid = feature_mean(&moons.x);

    for (title, lambda) in [("without outliers", 0.0), ("with ring outliers", 1.0)] {
        let curation = CurationConfig { lambda, c_learnable: lambda > 0.0, ..CurationConfig::default() };
        let objective = CurationObjective { model: model.clone(), curation: curation.clone() };
        let outliers = (lambda > 0.0).then_some(&ring);
        let (params, log) = train_adam(&objective, model.init()?, &moons, outliers, BatchSizes::default(), &adam, 7)?;
        let ensemble = PosteriorEnsemble::single(params);
        let map = heatmap_grid(&model, &ensemble, curation.annotators, bounds, 60)?;
        show(title, &map);
        let (mean, frac) = map.far_field([centroid[0], centroid[1]], 1.5, 0.5).unwrap();
        println!(
            "  final loss {:.4}, c = {:.3}, far field: mean P(Undef) {mean:.3}, {:.1}% of cells above 0.5\n",
            log.epochs.last().unwrap().mean_loss,
            log.epochs.last().unwrap().c,
            100.0 * frac
        );
    }
    Ok(())
}

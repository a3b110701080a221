//! Runs generate, train, eval, heatmap and report from a config file.
//!
//! cargo run --release --example pipeline -- configs/pipeline.json [out_dir]

use std::path::PathBuf;

use curation_ood::experiment::{cmd_report, run_all, ExperimentConfig, Layout};

fn main() -> curation_ood::Result<()> {
    let mut args = std::env::args().skip(1);
    let config = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("configs/pipeline.json"));
    let cfg = ExperimentConfig::load(&config)?;
    let out = args.next().map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("curation-ood-runs"));

    let metrics = run_all(&cfg, &out, &cfg.seeds)?;
    for m in &metrics {
        println!("seed {}: {} reports, {} snapshots", m.seed, m.reports.len(), m.ensemble_size);
    }
    let report = cmd_report(std::slice::from_ref(&cfg), &out)?;
    println!("\n{}", report.to_markdown());
    println!("written under {}", Layout::new(&out, &cfg).root.display());
    Ok(())
}

use std::fs;
use std::path::Path;

use curation_ood::data::feature_mean;
use curation_ood::eval::{auroc, fpr_at_tpr, ScoreKind};
use curation_ood::experiment::{
    cmd_eval, cmd_generate, cmd_heatmap, cmd_report, cmd_train, load_data, mean_stderr, read_heatmap_csv,
    read_scores, run_all, ExperimentConfig, Layout, Method, OptimizerConfig, TEST_IN,
};
use curation_ood::params::ParamSet;
use curation_ood::Error;

fn config(name: &str) -> ExperimentConfig {
    ExperimentConfig::load(&Path::new(env!("CARGO_MANIFEST_DIR")).join("configs").join(name)).unwrap()
}

fn tiny(method: Method) -> ExperimentConfig {
    let mut c = config("pipeline.json");
    c.method = method;
    c.label = None;
    if method == Method::Oe {
        c.optimizer = OptimizerConfig::Adam(Default::default());
        if let OptimizerConfig::Adam(a) = &mut c.optimizer {
            a.epochs = 3;
        }
    }
    c.seeds = vec![0, 1, 2];
    c
}

#[test]
fn shipped_configs_load() {
    for entry in fs::read_dir(Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")).unwrap() {
        let path = entry.unwrap().path();
        ExperimentConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    }
    let toy = config("toy_oe.json");
    assert_eq!(toy.data.train_in.n_per_class, 2000);
    assert_eq!(toy.model.hidden_sizes, vec![32, 32, 32]);
    let desk = config("desk_ours.json");
    if let OptimizerConfig::Csgld(c) = &desk.optimizer {
        assert_eq!((c.cycles, c.samples_per_cycle), (4, 3));
    } else {
        panic!("desk ours should sample");
    }
}

#[test]
fn generate_writes_counted_manifest_and_is_repeatable() {
    let cfg = config("toy_oe.json");
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let m = cmd_generate(&cfg, a.path(), &[3]).unwrap();
    cmd_generate(&cfg, b.path(), &[3]).unwrap();
    let rows: Vec<(&str, usize)> = m[0].files.iter().map(|f| (f.name.as_str(), f.rows)).collect();
    assert_eq!(rows, vec![("train_in", 4000), ("train_out", 2000), ("test_in", 1000), ("test_ring", 1000)]);
    let dir = Layout::new(a.path(), &cfg).data_dir(3);
    for f in &m[0].files {
        let x = fs::read(dir.join(&f.file)).unwrap();
        let y = fs::read(Layout::new(b.path(), &cfg).data_dir(3).join(&f.file)).unwrap();
        assert_eq!(x, y, "{}", f.file);
        assert!(String::from_utf8(x).unwrap().starts_with("# experiment=toy seed=3 data_hash="));
    }
    let data = load_data(&cfg, a.path(), 3).unwrap();
    assert_eq!(data.train_in.y.iter().filter(|&&y| y == 1).count(), 2000);
}

#[test]
fn bnn_ignores_outliers_and_ours_logs_c() {
    let out = tempfile::tempdir().unwrap();
    let bnn = tiny(Method::Bnn);
    cmd_generate(&bnn, out.path(), &[0]).unwrap();
    let r = cmd_train(&bnn, out.path(), &[0]).unwrap();
    assert_eq!(r[0].total_outlier_batches, 0);
    assert!(r[0].epochs.iter().all(|e| e.outlier_batches == 0 && e.c == 0.0));

    let ours = tiny(Method::Ours);
    let r = cmd_train(&ours, out.path(), &[0]).unwrap();
    assert!(r[0].total_outlier_batches > 0);
    assert_eq!(r[0].c_trajectory.len(), r[0].epochs.len());
    assert!(r[0].c_trajectory.iter().any(|&c| c != 0.0));
    let log = fs::read_to_string(Layout::new(out.path(), &ours).run_dir("ours", 0).join("logs/train.json")).unwrap();
    assert!(log.contains("\"c_trajectory\""));
}

#[test]
fn retraining_gives_identical_parameters() {
    let cfg = tiny(Method::Ours);
    let out = tempfile::tempdir().unwrap();
    cmd_generate(&cfg, out.path(), &[1]).unwrap();
    let path = Layout::new(out.path(), &cfg).run_dir("ours", 1).join("ensemble/sample_003.bin");
    cmd_train(&cfg, out.path(), &[1]).unwrap();
    let first = fs::read(&path).unwrap();
    cmd_train(&cfg, out.path(), &[1]).unwrap();
    assert_eq!(first, fs::read(&path).unwrap());
    assert!(String::from_utf8_lossy(&first[..200]).contains("config_hash"));
    ParamSet::load(&path).unwrap();
}

#[test]
fn report_numbers_match_score_csvs() {
    let out = tempfile::tempdir().unwrap();
    let cfgs = [tiny(Method::Bnn), tiny(Method::Oe), tiny(Method::Ours)];
    for c in &cfgs {
        run_all(c, out.path(), &c.seeds).unwrap();
    }
    let report = cmd_report(&cfgs, out.path()).unwrap();
    assert_eq!(report.rows.len(), 9);
    let md = fs::read_to_string(out.path().join("pipeline/report.md")).unwrap();
    assert_eq!(md.lines().filter(|l| l.starts_with("| ") && !l.starts_with("| run")).count(), 9);

    for c in &cfgs {
        let layout = Layout::new(out.path(), c);
        for t in &c.data.test_ood {
            let kind = c.eval.report_score;
            let file = |set: &str, seed: u64| {
                layout.run_dir(c.label(), seed).join("scores").join(format!("{set}.{}.csv", kind.as_str()))
            };
            let mut aurocs = Vec::new();
            let mut fprs = Vec::new();
            for &seed in &c.seeds {
                let a = read_scores(&file(TEST_IN, seed)).unwrap();
                let b = read_scores(&file(&t.name, seed)).unwrap();
                aurocs.push(auroc(&a, &b).unwrap());
                fprs.push(fpr_at_tpr(&a, &b, c.eval.n_percent).unwrap());
            }
            let row = report.row(c.label(), &t.name).unwrap();
            assert_eq!(row.score_kind, kind);
            assert_eq!((row.auroc_mean, row.auroc_stderr), mean_stderr(&aurocs));
            assert_eq!((row.fpr_mean, row.fpr_stderr), mean_stderr(&fprs));
        }
    }
}

#[test]
fn missing_seed_is_flagged() {
    let out = tempfile::tempdir().unwrap();
    let cfg = tiny(Method::Oe);
    run_all(&cfg, out.path(), &[0, 2]).unwrap();
    let report = cmd_report(std::slice::from_ref(&cfg), out.path()).unwrap();
    assert_eq!(report.runs[0].missing_seeds, vec![1]);
    assert!(report.rows.iter().all(|r| r.n_seeds == 2));
    let md = fs::read_to_string(out.path().join("pipeline/report.md")).unwrap();
    assert!(md.contains("seeds [1] missing"));
}

#[test]
fn mismatched_config_hash_is_refused() {
    let out = tempfile::tempdir().unwrap();
    let cfg = tiny(Method::Oe);
    run_all(&cfg, out.path(), &[0]).unwrap();
    let mut changed = cfg.clone();
    changed.lambda_oe = 0.25;
    assert!(matches!(cmd_report(&[changed.clone()], out.path()), Err(Error::SchemaMismatch(_))));
    assert!(matches!(cmd_eval(&changed, out.path(), &[0]), Err(Error::SchemaMismatch(_))));

    let mut other_data = tiny(Method::Ours);
    other_data.data.test_in.n_per_class = 7;
    assert!(matches!(cmd_report(&[cfg, other_data], out.path()), Err(Error::SchemaMismatch(_))));
}

#[test]
fn missing_artifacts_are_reported() {
    let out = tempfile::tempdir().unwrap();
    let cfg = tiny(Method::Ours);
    assert!(matches!(cmd_train(&cfg, out.path(), &[0]), Err(Error::MissingArtifact(_))));
    cmd_generate(&cfg, out.path(), &[0]).unwrap();
    assert!(matches!(cmd_eval(&cfg, out.path(), &[0]), Err(Error::MissingArtifact(_))));
    assert!(matches!(cmd_heatmap(&cfg, out.path(), &[0]), Err(Error::MissingArtifact(_))));
    assert!(matches!(cmd_report(&[cfg], out.path()), Err(Error::MissingArtifact(_))));
}

#[test]
fn heatmap_far_field_matches_grid() {
    let out = tempfile::tempdir().unwrap();
    let cfg = tiny(Method::Ours);
    run_all(&cfg, out.path(), &[0]).unwrap();
    let dir = Layout::new(out.path(), &cfg).run_dir("ours", 0).join("heatmaps");
    let meta: curation_ood::experiment::HeatmapMeta =
        serde_json::from_slice(&fs::read(dir.join("heatmap.json")).unwrap()).unwrap();
    let grid = read_heatmap_csv(&dir.join("undef.csv")).unwrap();
    let n = cfg.heatmap.resolution;
    assert_eq!((grid.len(), grid[0].len()), (n, n));

    let centroid = feature_mean(&load_data(&cfg, out.path(), 0).unwrap().train_in.x);
    let b = cfg.heatmap.bounds;
    let (mut sum, mut above, mut count) = (0.0, 0, 0);
    for (r, row) in grid.iter().enumerate() {
        for (c, v) in row.iter().enumerate() {
            let x = b.x_min + (c as f64 + 0.5) * (b.x_max - b.x_min) / n as f64;
            let y = b.y_max - (r as f64 + 0.5) * (b.y_max - b.y_min) / n as f64;
            if ((x - centroid[0]).powi(2) + (y - centroid[1]).powi(2)).sqrt() > cfg.heatmap.far_radius {
                sum += v;
                above += usize::from(*v > cfg.heatmap.undef_threshold);
                count += 1;
            }
        }
    }
    assert_eq!(meta.far_cells, count);
    assert!((meta.far_mean_undef.unwrap() - sum / count as f64).abs() < 1e-12);
    assert!((meta.far_fraction_above.unwrap() - above as f64 / count as f64).abs() < 1e-12);

    let pgm = fs::read(dir.join("undef.pgm")).unwrap();
    let header = format!("{n} {n}\n255\n");
    let start = pgm.windows(header.len()).position(|w| w == header.as_bytes()).unwrap() + header.len();
    assert_eq!(pgm.len() - start, n * n);
    assert_eq!(pgm[start], (255.0 * grid[0][0]).round() as u8);
}

#[test]
fn eval_covers_every_set_and_kind() {
    let out = tempfile::tempdir().unwrap();
    let cfg = tiny(Method::Ours);
    let m = run_all(&cfg, out.path(), &[0]).unwrap();
    assert_eq!(m[0].reports.len(), cfg.data.test_ood.len() * cfg.eval.score_kinds.len());
    assert_eq!(m[0].ensemble_size, 4);
    let r = m[0].find("blobs", ScoreKind::UndefProb).unwrap();
    assert!((0.0..=1.0).contains(&r.auroc) && (0.0..=1.0).contains(&r.fpr_at_n));
    assert_eq!(r.n_percent, 95.0);
    assert!(Layout::new(out.path(), &cfg).label_dir("ours").join("summary.json").exists());
}

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{generate_moons, generate_ood, sha256_hex, DataReference, ExperimentConfig, Method, OptimizerConfig};
use super::report::{summarize_label, write_json};
use crate::data::{csv_load, csv_text, derive_seed, feature_mean, CsvDataset, LabeledDataset, UnlabeledDataset};
use crate::error::{Error, Result};
use crate::eval::{heatmap_grid, score, Bounds, MetricsReport, ScoreKind, ScoreSet};
use crate::model::MlpConfig;
use crate::params::{write_atomic, ParamSet};
use crate::sampler::{
    run_csgld, train_adam, CrossEntropyObjective, CurationObjective, EpochLog, Objective, OutlierExposureObjective,
    PosteriorEnsemble,
};

/// Name of the in-distribution test split.
pub const TEST_IN: &str = "in";

/// Where one experiment's files live under an output root.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(out: &Path, cfg: &ExperimentConfig) -> Self {
        Layout { root: out.join(&cfg.experiment) }
    }

    pub fn data_dir(&self, seed: u64) -> PathBuf {
        self.root.join("data").join(seed.to_string())
    }

    pub fn label_dir(&self, label: &str) -> PathBuf {
        self.root.join(label)
    }

    pub fn run_dir(&self, label: &str, seed: u64) -> PathBuf {
        self.label_dir(label).join(seed.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataFile {
    pub name: String,
    pub file: String,
    pub rows: usize,
    pub labeled: bool,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataManifest {
    pub format: String,
    pub experiment: String,
    pub seed: u64,
    pub data_hash: String,
    pub files: Vec<DataFile>,
}

/// Everything generated for one seed.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedData {
    pub train_in: LabeledDataset,
    pub train_out: Option<UnlabeledDataset>,
    pub test_in: LabeledDataset,
    pub test_ood: Vec<(String, UnlabeledDataset)>,
}

/// Builds the datasets for one seed in memory.
pub fn build_data(cfg: &ExperimentConfig, seed: u64) -> Result<SeedData> {
    let d = &cfg.data;
    let train_in = generate_moons(&d.train_in, derive_seed(seed, 1))?;
    let reference = DataReference::of(&train_in);
    let train_out = d
        .train_out
        .as_ref()
        .map(|s| generate_ood(s, &reference, derive_seed(seed, 2)))
        .transpose()?;
    let test_in = generate_moons(&d.test_in, derive_seed(seed, 3))?;
    let test_ood = d
        .test_ood
        .iter()
        .enumerate()
        .map(|(i, t)| Ok((t.name.clone(), generate_ood(&t.generator, &reference, derive_seed(seed, 16 + i as u64))?)))
        .collect::<Result<_>>()?;
    Ok(SeedData { train_in, train_out, test_in, test_ood })
}

/// Writes every dataset as CSV plus `manifest.json` under `<out>/<experiment>/data/<seed>/`.
pub fn cmd_generate(cfg: &ExperimentConfig, out: &Path, seeds: &[u64]) -> Result<Vec<DataManifest>> {
    let layout = Layout::new(out, cfg);
    let data_hash = cfg.data_hash();
    let mut manifests = Vec::new();
    for &seed in seeds {
        let data = build_data(cfg, seed)?;
        let dir = layout.data_dir(seed);
        let comment = format!("# experiment={} seed={seed} data_hash={data_hash}\n", cfg.experiment);
        let mut files = Vec::new();
        let mut write = |name: &str, x: &crate::tensor::Tensor, y: Option<&[usize]>| -> Result<()> {
            let file = format!("{name}.csv");
            let text = comment.clone() + &csv_text(x, y);
            write_atomic(&dir.join(&file), text.as_bytes())?;
            files.push(DataFile {
                name: name.to_string(),
                file,
                rows: x.rows(),
                labeled: y.is_some(),
                sha256: sha256_hex(text.as_bytes()),
            });
            Ok(())
        };
        write("train_in", &data.train_in.x, Some(&data.train_in.y))?;
        if let Some(o) = &data.train_out {
            write("train_out", &o.x, None)?;
        }
        write("test_in", &data.test_in.x, Some(&data.test_in.y))?;
        for (name, d) in &data.test_ood {
            write(&format!("test_{name}"), &d.x, None)?;
        }
        let manifest = DataManifest {
            format: "data-v1".into(),
            experiment: cfg.experiment.clone(),
            seed,
            data_hash: data_hash.clone(),
            files,
        };
        write_json(&dir.join("manifest.json"), &manifest)?;
        manifests.push(manifest);
    }
    Ok(manifests)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    Ok(serde_json::from_slice(&fs::read(path)?)?)
}

fn load_labeled(path: &Path, classes: usize) -> Result<LabeledDataset> {
    match csv_load(path)? {
        CsvDataset::Labeled(d) => LabeledDataset::new(d.x, d.y, classes),
        CsvDataset::Unlabeled(_) => Err(Error::SchemaMismatch(format!("{} has no label column", path.display()))),
    }
}

fn load_unlabeled(path: &Path) -> Result<UnlabeledDataset> {
    match csv_load(path)? {
        CsvDataset::Unlabeled(d) => Ok(d),
        CsvDataset::Labeled(d) => UnlabeledDataset::new(d.x),
    }
}

/// Reads the generated datasets for one seed, checking they match the config.
pub fn load_data(cfg: &ExperimentConfig, out: &Path, seed: u64) -> Result<SeedData> {
    let dir = Layout::new(out, cfg).data_dir(seed);
    let manifest: DataManifest = read_json(&dir.join("manifest.json"))?;
    if manifest.data_hash != cfg.data_hash() || manifest.seed != seed {
        return Err(Error::SchemaMismatch(format!(
            "{} was generated from a different data config or seed; rerun generate",
            dir.display()
        )));
    }
    let classes = cfg.model.num_classes;
    let train_out = if cfg.data.train_out.is_some() {
        Some(load_unlabeled(&dir.join("train_out.csv"))?)
    } else {
        None
    };
    let test_ood = cfg
        .data
        .test_ood
        .iter()
        .map(|t| Ok((t.name.clone(), load_unlabeled(&dir.join(format!("test_{}.csv", t.name)))?)))
        .collect::<Result<_>>()?;
    Ok(SeedData {
        train_in: load_labeled(&dir.join("train_in.csv"), classes)?,
        train_out,
        test_in: load_labeled(&dir.join("test_in.csv"), classes)?,
        test_ood,
    })
}

/// Per-seed training record written to `logs/train.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub format: String,
    pub experiment: String,
    pub method: Method,
    pub label: String,
    pub seed: u64,
    pub config_hash: String,
    pub data_hash: String,
    pub optimizer: String,
    pub ensemble_size: usize,
    pub total_outlier_batches: usize,
    pub c_trajectory: Vec<f64>,
    pub epochs: Vec<EpochLog>,
}

fn objective(cfg: &ExperimentConfig) -> Box<dyn Objective> {
    let model = cfg.model.clone();
    match cfg.method {
        Method::Bnn => Box::new(CrossEntropyObjective { model }),
        Method::Oe => Box::new(OutlierExposureObjective { model, lambda_oe: cfg.lambda_oe }),
        Method::Ours => Box::new(CurationObjective { model, curation: cfg.curation.clone() }),
    }
}

/// Model with its initialisation seed mixed with the run seed.
pub fn seeded_model(cfg: &ExperimentConfig, seed: u64) -> MlpConfig {
    MlpConfig { init_seed: derive_seed(seed, 100 + cfg.model.init_seed), ..cfg.model.clone() }
}

/// Trains one method on already-loaded data.
pub fn train_on(cfg: &ExperimentConfig, data: &SeedData, seed: u64) -> Result<(PosteriorEnsemble, TrainRecord)> {
    let objective = objective(cfg);
    let init = seeded_model(cfg, seed).init()?;
    let d_out = if cfg.uses_outliers() { data.train_out.as_ref() } else { None };
    let (ensemble, log, optimizer) = match &cfg.optimizer {
        OptimizerConfig::Adam(a) => {
            let (p, log) = train_adam(objective.as_ref(), init, &data.train_in, d_out, cfg.batch, a, derive_seed(seed, 200))?;
            (PosteriorEnsemble::single(p), log, "adam")
        }
        OptimizerConfig::Csgld(c) => {
            let c = crate::sampler::CsgldConfig { seed: derive_seed(seed, 300 + c.seed), ..c.clone() };
            let (e, log) = run_csgld(objective.as_ref(), init, &data.train_in, d_out, cfg.batch, &c)?;
            (e, log, "csgld")
        }
    };
    let record = TrainRecord {
        format: "train-log-v1".into(),
        experiment: cfg.experiment.clone(),
        method: cfg.method,
        label: cfg.label().to_string(),
        seed,
        config_hash: cfg.config_hash(),
        data_hash: cfg.data_hash(),
        optimizer: optimizer.into(),
        ensemble_size: ensemble.len(),
        total_outlier_batches: log.total_outlier_batches(),
        c_trajectory: log.c_trajectory(),
        epochs: log.epochs,
    };
    Ok((ensemble, record))
}

/// Trains on each seed and writes `params/`, `ensemble/` and `logs/train.json`.
pub fn cmd_train(cfg: &ExperimentConfig, out: &Path, seeds: &[u64]) -> Result<Vec<TrainRecord>> {
    let layout = Layout::new(out, cfg);
    let mut records = Vec::new();
    for &seed in seeds {
        let data = load_data(cfg, out, seed)?;
        let (ensemble, record) = train_on(cfg, &data, seed)?;
        let dir = layout.run_dir(cfg.label(), seed);
        let meta = serde_json::json!({ "config_hash": record.config_hash, "seed": seed });
        ensemble.samples[ensemble.len() - 1]
            .params
            .save_tagged(&dir.join("params").join("final.bin"), meta)?;
        ensemble.save(&dir.join("ensemble"), seed, &record.config_hash)?;
        write_json(&dir.join("logs").join("train.json"), &record)?;
        records.push(record);
    }
    Ok(records)
}

/// Loads a trained ensemble, refusing artifacts from another config.
pub fn load_ensemble(cfg: &ExperimentConfig, out: &Path, seed: u64) -> Result<PosteriorEnsemble> {
    let dir = Layout::new(out, cfg).run_dir(cfg.label(), seed).join("ensemble");
    let (ensemble, manifest) = PosteriorEnsemble::load(&dir)?;
    if manifest.config_hash != cfg.config_hash() || manifest.seed != seed {
        return Err(Error::SchemaMismatch(format!(
            "{} was trained with a different config or seed; retrain",
            dir.display()
        )));
    }
    Ok(ensemble)
}

/// Per-seed evaluation written to `metrics/metrics.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub format: String,
    pub experiment: String,
    pub method: Method,
    pub label: String,
    pub seed: u64,
    pub config_hash: String,
    pub data_hash: String,
    pub ensemble_size: usize,
    pub n_percent: f64,
    pub report_score: ScoreKind,
    pub reports: Vec<MetricsReport>,
}

impl RunMetrics {
    pub fn find(&self, test_set: &str, kind: ScoreKind) -> Option<&MetricsReport> {
        self.reports.iter().find(|r| r.test_set == test_set && r.score_kind == kind)
    }
}

fn score_file(set: &str, kind: ScoreKind) -> String {
    format!("{set}.{}.csv", kind.as_str())
}

fn write_scores(path: &Path, header: &str, scores: &[f64]) -> Result<()> {
    let mut text = String::with_capacity(header.len() + 24 * scores.len());
    text.push_str(header);
    text.push_str("score\n");
    for s in scores {
        text.push_str(&format!("{s:?}\n"));
    }
    write_atomic(path, text.as_bytes())
}

/// Reads a score CSV written by [`cmd_eval`].
pub fn read_scores(path: &Path) -> Result<Vec<f64>> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    let mut header_seen = false;
    for (i, line) in text.lines().enumerate() {
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        if !header_seen {
            header_seen = line.trim() == "score";
            if !header_seen {
                return Err(Error::Csv { path: path.into(), line: i + 1, message: "expected header \"score\"".into() });
            }
            continue;
        }
        out.push(line.trim().parse().map_err(|_| Error::Csv {
            path: path.into(),
            line: i + 1,
            message: format!("invalid number {line:?}"),
        })?);
    }
    Ok(out)
}

/// Scores every test set under every configured score kind.
pub fn evaluate(cfg: &ExperimentConfig, ensemble: &PosteriorEnsemble, data: &SeedData) -> Result<Vec<(ScoreSet, Vec<ScoreSet>)>> {
    let s = cfg.curation.annotators;
    cfg.eval
        .score_kinds
        .iter()
        .map(|&kind| {
            let label = cfg.label();
            let in_set = ScoreSet::new(TEST_IN, label, kind, score(kind, &cfg.model, ensemble, &data.test_in.x, s)?)?;
            let outs = data
                .test_ood
                .iter()
                .map(|(name, d)| ScoreSet::new(name.clone(), label, kind, score(kind, &cfg.model, ensemble, &d.x, s)?))
                .collect::<Result<_>>()?;
            Ok((in_set, outs))
        })
        .collect()
}

/// Writes score CSVs and `metrics/metrics.json` per seed, then the label's `summary.json`.
pub fn cmd_eval(cfg: &ExperimentConfig, out: &Path, seeds: &[u64]) -> Result<Vec<RunMetrics>> {
    let layout = Layout::new(out, cfg);
    let mut all = Vec::new();
    for &seed in seeds {
        let ensemble = load_ensemble(cfg, out, seed)?;
        let data = load_data(cfg, out, seed)?;
        let dir = layout.run_dir(cfg.label(), seed);
        let header = format!(
            "# experiment={} label={} seed={seed} config_hash={}\n",
            cfg.experiment,
            cfg.label(),
            cfg.config_hash()
        );
        let mut reports = Vec::new();
        for (in_set, outs) in evaluate(cfg, &ensemble, &data)? {
            write_scores(&dir.join("scores").join(score_file(TEST_IN, in_set.kind)), &header, &in_set.scores)?;
            for o in &outs {
                write_scores(&dir.join("scores").join(score_file(&o.dataset, o.kind)), &header, &o.scores)?;
                reports.push(MetricsReport::compute(&in_set, o, cfg.eval.n_percent)?);
            }
        }
        let metrics = RunMetrics {
            format: "metrics-v1".into(),
            experiment: cfg.experiment.clone(),
            method: cfg.method,
            label: cfg.label().to_string(),
            seed,
            config_hash: cfg.config_hash(),
            data_hash: cfg.data_hash(),
            ensemble_size: ensemble.len(),
            n_percent: cfg.eval.n_percent,
            report_score: cfg.eval.report_score,
            reports,
        };
        write_json(&dir.join("metrics").join("metrics.json"), &metrics)?;
        all.push(metrics);
    }
    let summary = summarize_label(cfg, out)?;
    write_json(&layout.label_dir(cfg.label()).join("summary.json"), &summary)?;
    Ok(all)
}

/// Metadata written next to a heatmap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapMeta {
    pub format: String,
    pub experiment: String,
    pub label: String,
    pub seed: u64,
    pub config_hash: String,
    pub bounds: Bounds,
    pub resolution: usize,
    /// Row 0 of the grid is the `y_max` edge; values are cell-centre `P(Undef)`.
    pub orientation: String,
    pub centroid: Vec<f64>,
    pub far_radius: f64,
    pub undef_threshold: f64,
    pub far_cells: usize,
    pub far_mean_undef: Option<f64>,
    pub far_fraction_above: Option<f64>,
}

/// Writes `heatmaps/undef.{csv,pgm,json}` for each seed.
pub fn cmd_heatmap(cfg: &ExperimentConfig, out: &Path, seeds: &[u64]) -> Result<Vec<HeatmapMeta>> {
    let layout = Layout::new(out, cfg);
    let h = &cfg.heatmap;
    let mut metas = Vec::new();
    for &seed in seeds {
        let ensemble = load_ensemble(cfg, out, seed)?;
        let data = load_data(cfg, out, seed)?;
        let centroid = feature_mean(&data.train_in.x);
        let map = heatmap_grid(&cfg.model, &ensemble, cfg.curation.annotators, h.bounds, h.resolution)?;
        let far = map.far_field([centroid[0], centroid[1]], h.far_radius, h.undef_threshold);
        let far_cells = (0..h.resolution * h.resolution)
            .filter(|i| {
                let [x, y] = map.cell_center(i / h.resolution, i % h.resolution);
                (x - centroid[0]).hypot(y - centroid[1]) > h.far_radius
            })
            .count();
        let dir = layout.run_dir(cfg.label(), seed).join("heatmaps");
        let tag = format!("config_hash={} seed={seed}", cfg.config_hash());
        write_atomic(&dir.join("undef.csv"), format!("# {tag}\n{}", map.to_csv()).as_bytes())?;
        let pgm = map.to_pgm();
        let mut tagged = format!("P5\n# {tag}\n").into_bytes();
        tagged.extend_from_slice(&pgm[3..]);
        write_atomic(&dir.join("undef.pgm"), &tagged)?;
        let meta = HeatmapMeta {
            format: "heatmap-v1".into(),
            experiment: cfg.experiment.clone(),
            label: cfg.label().to_string(),
            seed,
            config_hash: cfg.config_hash(),
            bounds: h.bounds,
            resolution: h.resolution,
            orientation: "row 0 = y_max, col 0 = x_min".into(),
            centroid,
            far_radius: h.far_radius,
            undef_threshold: h.undef_threshold,
            far_cells,
            far_mean_undef: far.map(|f| f.0),
            far_fraction_above: far.map(|f| f.1),
        };
        write_json(&dir.join("heatmap.json"), &meta)?;
        metas.push(meta);
    }
    Ok(metas)
}

/// Reads the first non-comment matrix from a heatmap CSV.
pub fn read_heatmap_csv(path: &Path) -> Result<Vec<Vec<f64>>> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    fs::read_to_string(path)?
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.starts_with('#') && !l.trim().is_empty())
        .map(|(i, l)| {
            l.split(',')
                .map(|f| {
                    f.trim().parse().map_err(|_| Error::Csv {
                        path: path.into(),
                        line: i + 1,
                        message: format!("invalid number {f:?}"),
                    })
                })
                .collect()
        })
        .collect()
}

/// Loads the final parameters of an Adam run, or the last snapshot of a sampler run.
pub fn load_final_params(cfg: &ExperimentConfig, out: &Path, seed: u64) -> Result<ParamSet> {
    ParamSet::load(&Layout::new(out, cfg).run_dir(cfg.label(), seed).join("params").join("final.bin"))
}

/// `generate`, `train`, `eval` and `heatmap` in sequence.
pub fn run_all(cfg: &ExperimentConfig, out: &Path, seeds: &[u64]) -> Result<Vec<RunMetrics>> {
    cmd_generate(cfg, out, seeds)?;
    cmd_train(cfg, out, seeds)?;
    let metrics = cmd_eval(cfg, out, seeds)?;
    cmd_heatmap(cfg, out, seeds)?;
    Ok(metrics)
}

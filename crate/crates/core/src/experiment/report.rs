use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::commands::{Layout, RunMetrics};
use super::config::{ExperimentConfig, Method};
use crate::error::{Error, Result};
use crate::eval::ScoreKind;
use crate::params::write_atomic;

/// Pretty JSON with a trailing newline, written atomically.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

/// Sample mean and standard error of the mean; the error needs two values.
pub fn mean_stderr(values: &[f64]) -> (f64, Option<f64>) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, None);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, Some((var / n).sqrt()))
}

/// Seed-aggregated metrics for one (test set, score kind).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub test_set: String,
    pub score_kind: ScoreKind,
    pub n_seeds: usize,
    pub auroc_mean: f64,
    pub auroc_stderr: Option<f64>,
    pub fpr_mean: f64,
    pub fpr_stderr: Option<f64>,
}

/// Aggregate over the seeds of one run label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelSummary {
    pub format: String,
    pub experiment: String,
    pub method: Method,
    pub label: String,
    pub config_hash: String,
    pub data_hash: String,
    pub report_score: ScoreKind,
    pub n_percent: f64,
    pub seeds_expected: Vec<u64>,
    pub seeds_present: Vec<u64>,
    pub missing_seeds: Vec<u64>,
    pub rows: Vec<AggregateRow>,
}

fn read_metrics(path: &Path) -> Result<RunMetrics> {
    let m: RunMetrics = serde_json::from_slice(&fs::read(path)?)
        .map_err(|e| Error::SchemaMismatch(format!("{}: {e}", path.display())))?;
    if m.format != "metrics-v1" {
        return Err(Error::SchemaMismatch(format!("{}: unknown format {}", path.display(), m.format)));
    }
    Ok(m)
}

/// Collects the per-seed metrics of `cfg`'s label, flagging seeds that have none.
pub fn summarize_label(cfg: &ExperimentConfig, out: &Path) -> Result<LabelSummary> {
    let layout = Layout::new(out, cfg);
    let hash = cfg.config_hash();
    let mut runs = Vec::new();
    let mut missing = Vec::new();
    for &seed in &cfg.seeds {
        let path = layout.run_dir(cfg.label(), seed).join("metrics").join("metrics.json");
        if !path.exists() {
            missing.push(seed);
            continue;
        }
        let m = read_metrics(&path)?;
        if m.config_hash != hash {
            return Err(Error::SchemaMismatch(format!(
                "{} has config hash {} but the config hashes to {hash}",
                path.display(),
                m.config_hash
            )));
        }
        if m.seed != seed || m.data_hash != cfg.data_hash() {
            return Err(Error::SchemaMismatch(format!("{} does not match its seed or data", path.display())));
        }
        runs.push(m);
    }
    let mut keys: Vec<(String, ScoreKind)> = Vec::new();
    if let Some(first) = runs.first() {
        for r in &first.reports {
            keys.push((r.test_set.clone(), r.score_kind));
        }
    }
    let mut rows = Vec::new();
    for (set, kind) in keys {
        let mut auroc = Vec::new();
        let mut fpr = Vec::new();
        for m in &runs {
            let r = m.find(&set, kind).ok_or_else(|| {
                Error::SchemaMismatch(format!("seed {} has no {set}/{} metrics", m.seed, kind.as_str()))
            })?;
            auroc.push(r.auroc);
            fpr.push(r.fpr_at_n);
        }
        let (auroc_mean, auroc_stderr) = mean_stderr(&auroc);
        let (fpr_mean, fpr_stderr) = mean_stderr(&fpr);
        rows.push(AggregateRow {
            test_set: set,
            score_kind: kind,
            n_seeds: runs.len(),
            auroc_mean,
            auroc_stderr,
            fpr_mean,
            fpr_stderr,
        });
    }
    Ok(LabelSummary {
        format: "summary-v1".into(),
        experiment: cfg.experiment.clone(),
        method: cfg.method,
        label: cfg.label().to_string(),
        config_hash: hash,
        data_hash: cfg.data_hash(),
        report_score: cfg.eval.report_score,
        n_percent: cfg.eval.n_percent,
        seeds_expected: cfg.seeds.clone(),
        seeds_present: runs.iter().map(|m| m.seed).collect(),
        missing_seeds: missing,
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub label: String,
    pub method: Method,
    pub test_set: String,
    pub score_kind: ScoreKind,
    pub n_seeds: usize,
    pub auroc_mean: f64,
    pub auroc_stderr: Option<f64>,
    pub fpr_mean: f64,
    pub fpr_stderr: Option<f64>,
    pub n_percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunEntry {
    pub label: String,
    pub method: Method,
    pub config_hash: String,
    pub score_kind: ScoreKind,
    pub seeds_expected: Vec<u64>,
    pub missing_seeds: Vec<u64>,
}

/// Comparison table across run labels of one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub format: String,
    pub experiment: String,
    pub data_hash: String,
    pub runs: Vec<RunEntry>,
    pub rows: Vec<ReportRow>,
}

impl Report {
    pub fn row(&self, label: &str, test_set: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.label == label && r.test_set == test_set)
    }

    pub fn to_markdown(&self) -> String {
        let fmt = |m: f64, s: Option<f64>| match s {
            Some(s) => format!("{:.2} ± {:.2}", 100.0 * m, 100.0 * s),
            None => format!("{:.2}", 100.0 * m),
        };
        let mut md = format!("# {}\n\n", self.experiment);
        let n = self.rows.first().map_or(95.0, |r| r.n_percent);
        let _ = writeln!(md, "Mean ± standard error over seeds, in percent. FPR is measured at {n}% TPR.\n");
        let _ = writeln!(md, "| run | method | test set | score | seeds | FPR{n} ↓ | AUROC ↑ |");
        md.push_str("|---|---|---|---|---|---|---|\n");
        for r in &self.rows {
            let _ = writeln!(
                md,
                "| {} | {} | {} | {} | {} | {} | {} |",
                r.label,
                r.method.as_str(),
                r.test_set,
                r.score_kind.as_str(),
                r.n_seeds,
                fmt(r.fpr_mean, r.fpr_stderr),
                fmt(r.auroc_mean, r.auroc_stderr)
            );
        }
        let missing: Vec<String> = self
            .runs
            .iter()
            .filter(|r| !r.missing_seeds.is_empty())
            .map(|r| format!("- {}: seeds {:?} missing", r.label, r.missing_seeds))
            .collect();
        if !missing.is_empty() {
            md.push_str("\n**Incomplete runs**\n\n");
            md.push_str(&missing.join("\n"));
            md.push('\n');
        }
        md
    }
}

/// Merges the runs named by `configs` into `report.{json,md}` under the experiment directory.
pub fn cmd_report(configs: &[ExperimentConfig], out: &Path) -> Result<Report> {
    let first = configs.first().ok_or(Error::Empty("report configs"))?;
    let mut labels = BTreeSet::new();
    for c in configs {
        if c.experiment != first.experiment {
            return Err(Error::SchemaMismatch(format!(
                "cannot merge experiments {} and {}",
                first.experiment, c.experiment
            )));
        }
        if c.data_hash() != first.data_hash() {
            return Err(Error::SchemaMismatch(format!(
                "runs {} and {} use different data configs",
                first.label(),
                c.label()
            )));
        }
        if !labels.insert(c.label()) {
            return Err(Error::SchemaMismatch(format!("run label {} given twice", c.label())));
        }
    }
    let mut runs = Vec::new();
    let mut rows = Vec::new();
    for c in configs {
        let s = summarize_label(c, out)?;
        if s.seeds_present.is_empty() {
            return Err(Error::MissingArtifact(Layout::new(out, c).label_dir(c.label())));
        }
        for r in s.rows.iter().filter(|r| r.score_kind == s.report_score) {
            rows.push(ReportRow {
                label: s.label.clone(),
                method: s.method,
                test_set: r.test_set.clone(),
                score_kind: r.score_kind,
                n_seeds: r.n_seeds,
                auroc_mean: r.auroc_mean,
                auroc_stderr: r.auroc_stderr,
                fpr_mean: r.fpr_mean,
                fpr_stderr: r.fpr_stderr,
                n_percent: s.n_percent,
            });
        }
        runs.push(RunEntry {
            label: s.label,
            method: s.method,
            config_hash: s.config_hash,
            score_kind: s.report_score,
            seeds_expected: s.seeds_expected,
            missing_seeds: s.missing_seeds,
        });
    }
    let report = Report {
        format: "report-v1".into(),
        experiment: first.experiment.clone(),
        data_hash: first.data_hash(),
        runs,
        rows,
    };
    let root = Layout::new(out, first).root;
    write_json(&root.join("report.json"), &report)?;
    write_atomic(&root.join("report.md"), report.to_markdown().as_bytes())?;
    Ok(report)
}

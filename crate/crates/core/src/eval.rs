//! Ensemble prediction, uncertainty scores and OOD detection metrics.
//!
//! Every score follows one orientation: larger means more likely OOD.

use serde::{Deserialize, Serialize};

use crate::curation::CuratedLogProbs;
use crate::error::{Error, Result};
use crate::model::{MlpConfig, CURATION_BIAS};
use crate::sampler::PosteriorEnsemble;
use crate::stable::entropy;
use crate::tensor::Tensor;

/// Which uncertainty is used as the OOD score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "snake_case")]
pub enum ScoreKind {
    /// Entropy of the posterior-mean single-annotator predictive.
    EntropyClasses,
    /// Entropy of the posterior-mean `C + 1`-way curated distribution.
    EntropyCurated,
    /// Posterior-mean probability of `Undef`.
    UndefProb,
    /// Mean per-sample predictive entropy.
    Aleatoric,
    /// Mutual information between label and parameters.
    Epistemic,
}

impl ScoreKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ScoreKind::EntropyClasses => "entropy_classes",
            ScoreKind::EntropyCurated => "entropy_curated",
            ScoreKind::UndefProb => "undef_prob",
            ScoreKind::Aleatoric => "aleatoric",
            ScoreKind::Epistemic => "epistemic",
        }
    }
}

/// Scores for one dataset under one method and score kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSet {
    pub dataset: String,
    pub method: String,
    pub kind: ScoreKind,
    pub scores: Vec<f64>,
}

impl ScoreSet {
    pub fn new(dataset: impl Into<String>, method: impl Into<String>, kind: ScoreKind, scores: Vec<f64>) -> Result<Self> {
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFinite { op: "score" });
        }
        Ok(ScoreSet {
            dataset: dataset.into(),
            method: method.into(),
            kind,
            scores,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreSummary {
    pub count: usize,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

impl ScoreSummary {
    pub fn of(scores: &[f64]) -> Self {
        let n = scores.len();
        if n == 0 {
            return ScoreSummary { count: 0, mean: 0.0, std: 0.0, min: 0.0, max: 0.0 };
        }
        let mean = scores.iter().sum::<f64>() / n as f64;
        let var = scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n as f64;
        ScoreSummary {
            count: n,
            mean,
            std: var.sqrt(),
            min: scores.iter().copied().fold(f64::INFINITY, f64::min),
            max: scores.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

/// Detection quality for one (in-distribution, OOD) pair of score sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub test_set: String,
    pub score_kind: ScoreKind,
    pub auroc: f64,
    pub fpr_at_n: f64,
    pub n_percent: f64,
    pub n_in: usize,
    pub n_out: usize,
    pub in_summary: ScoreSummary,
    pub out_summary: ScoreSummary,
}

impl MetricsReport {
    pub fn compute(in_scores: &ScoreSet, out_scores: &ScoreSet, n_percent: f64) -> Result<Self> {
        Ok(MetricsReport {
            test_set: out_scores.dataset.clone(),
            score_kind: out_scores.kind,
            auroc: auroc(&in_scores.scores, &out_scores.scores)?,
            fpr_at_n: fpr_at_tpr(&in_scores.scores, &out_scores.scores, n_percent)?,
            n_percent,
            n_in: in_scores.scores.len(),
            n_out: out_scores.scores.len(),
            in_summary: ScoreSummary::of(&in_scores.scores),
            out_summary: ScoreSummary::of(&out_scores.scores),
        })
    }
}

/// Per-sample class probabilities, one `n × C` tensor per ensemble member.
pub fn member_probs(model: &MlpConfig, ensemble: &PosteriorEnsemble, x: &Tensor) -> Result<Vec<Tensor>> {
    ensemble.check_usable()?;
    ensemble
        .params()
        .map(|p| Ok(model.predict(p, x)?.probs()))
        .collect()
}

fn mean_rows(members: &[Tensor]) -> Result<Tensor> {
    let first = members.first().ok_or(Error::Empty("posterior ensemble"))?;
    let mut acc = Tensor::zeros(first.shape());
    for m in members {
        acc.add_assign(m);
    }
    let k = members.len() as f64;
    let c = acc.cols();
    for row in acc.data_mut().chunks_mut(c) {
        row.iter_mut().for_each(|v| *v /= k);
        let s: f64 = row.iter().sum();
        row.iter_mut().for_each(|v| *v /= s);
    }
    Ok(acc)
}

/// Posterior-mean predictive distribution, `n × C`.
pub fn ensemble_predictive(model: &MlpConfig, ensemble: &PosteriorEnsemble, x: &Tensor) -> Result<Tensor> {
    mean_rows(&member_probs(model, ensemble, x)?)
}

/// Entropy of each row of a distribution matrix.
pub fn total_uncertainty(mean_dist: &Tensor) -> Vec<f64> {
    (0..mean_dist.rows()).map(|i| entropy(mean_dist.row(i))).collect()
}

/// Total, aleatoric and epistemic uncertainty per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    pub total: Vec<f64>,
    pub aleatoric: Vec<f64>,
    pub epistemic: Vec<f64>,
}

/// Splits predictive entropy into expected entropy plus mutual information.
pub fn decompose_members(members: &[Tensor]) -> Result<Decomposition> {
    let mean = mean_rows(members)?;
    let total = total_uncertainty(&mean);
    let n = mean.rows();
    let k = members.len() as f64;
    let mut aleatoric = vec![0.0; n];
    for m in members {
        for (a, i) in aleatoric.iter_mut().zip(0..n) {
            *a += entropy(m.row(i));
        }
    }
    aleatoric.iter_mut().for_each(|a| *a /= k);
    let epistemic = if members.len() == 1 {
        vec![0.0; n]
    } else {
        total.iter().zip(&aleatoric).map(|(t, a)| t - a).collect()
    };
    Ok(Decomposition { total, aleatoric, epistemic })
}

pub fn decompose_uncertainty(model: &MlpConfig, ensemble: &PosteriorEnsemble, x: &Tensor) -> Result<Decomposition> {
    decompose_members(&member_probs(model, ensemble, x)?)
}

/// Per-member curated distributions (`Undef` last), using each member's own `c`.
fn member_curated(model: &MlpConfig, ensemble: &PosteriorEnsemble, x: &Tensor, annotators: u32) -> Result<Vec<Tensor>> {
    ensemble.check_usable()?;
    ensemble
        .params()
        .map(|p| {
            let c = p.get(CURATION_BIAS).map_or(0.0, |t| t.item());
            let dist = model.predict(p, x)?;
            Ok(CuratedLogProbs::from_dist(&dist, annotators, c)?.probs_with_undef())
        })
        .collect()
}

/// Posterior-mean `P(Undef)` per row.
pub fn undef_score(model: &MlpConfig, ensemble: &PosteriorEnsemble, x: &Tensor, annotators: u32) -> Result<Vec<f64>> {
    let members = member_curated(model, ensemble, x, annotators)?;
    let n = x.rows();
    let mut acc = vec![0.0; n];
    for m in &members {
        let c = m.cols();
        for (a, i) in acc.iter_mut().zip(0..n) {
            *a += m.at(i, c - 1);
        }
    }
    let k = members.len() as f64;
    Ok(acc.into_iter().map(|a| a / k).collect())
}

/// Computes the requested OOD score for every row of `x`.
pub fn score(
    kind: ScoreKind,
    model: &MlpConfig,
    ensemble: &PosteriorEnsemble,
    x: &Tensor,
    annotators: u32,
) -> Result<Vec<f64>> {
    match kind {
        ScoreKind::EntropyClasses => Ok(decompose_uncertainty(model, ensemble, x)?.total),
        ScoreKind::Aleatoric => Ok(decompose_uncertainty(model, ensemble, x)?.aleatoric),
        ScoreKind::Epistemic => Ok(decompose_uncertainty(model, ensemble, x)?.epistemic),
        ScoreKind::EntropyCurated => {
            let mean = mean_rows(&member_curated(model, ensemble, x, annotators)?)?;
            Ok(total_uncertainty(&mean))
        }
        ScoreKind::UndefProb => undef_score(model, ensemble, x, annotators),
    }
}

/// Probability that a random OOD score exceeds a random in-distribution score,
/// ties counting one half.
pub fn auroc(in_scores: &[f64], out_scores: &[f64]) -> Result<f64> {
    if in_scores.is_empty() {
        return Err(Error::Empty("in-distribution scores"));
    }
    if out_scores.is_empty() {
        return Err(Error::Empty("OOD scores"));
    }
    let mut sorted = in_scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    // Twice the Mann–Whitney U statistic, kept integral.
    let mut twice_u: u64 = 0;
    for &o in out_scores {
        let below = sorted.partition_point(|&v| v < o) as u64;
        let not_above = sorted.partition_point(|&v| v <= o) as u64;
        twice_u += 2 * below + (not_above - below);
    }
    Ok(twice_u as f64 / (2.0 * in_scores.len() as f64 * out_scores.len() as f64))
}

/// False-positive rate on in-distribution scores at the largest threshold
/// that flags at least `n_percent`% of OOD scores (`score ≥ τ` is flagged).
pub fn fpr_at_tpr(in_scores: &[f64], out_scores: &[f64], n_percent: f64) -> Result<f64> {
    if in_scores.is_empty() {
        return Err(Error::Empty("in-distribution scores"));
    }
    if out_scores.is_empty() {
        return Err(Error::Empty("OOD scores"));
    }
    if !(0.0..=100.0).contains(&n_percent) {
        return Err(Error::InvalidArgument(format!("n_percent must be in [0, 100], got {n_percent}")));
    }
    let target = n_percent / 100.0;
    let m = out_scores.len() as f64;
    let mut out_desc = out_scores.to_vec();
    out_desc.sort_by(|a, b| b.total_cmp(a));
    // Walk distinct OOD values from the top; the first that reaches the target
    // is the largest admissible threshold.
    let mut tau = out_desc[out_desc.len() - 1];
    let mut i = 0;
    while i < out_desc.len() {
        let v = out_desc[i];
        while i < out_desc.len() && out_desc[i] == v {
            i += 1;
        }
        if i as f64 / m >= target {
            tau = v;
            break;
        }
    }
    let flagged = in_scores.iter().filter(|&&s| s >= tau).count();
    Ok(flagged as f64 / in_scores.len() as f64)
}

/// Rectangle `[x_min, x_max] × [y_min, y_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bounds {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

/// `P(Undef)` on a regular grid. Row 0 is the top (`y_max`) edge.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub bounds: Bounds,
    pub resolution: usize,
    pub values: Tensor,
}

impl Heatmap {
    /// Centre of cell `(row, col)`.
    pub fn cell_center(&self, row: usize, col: usize) -> [f64; 2] {
        grid_center(&self.bounds, self.resolution, row, col)
    }

    /// Comma-separated matrix, one grid row per line.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for r in 0..self.resolution {
            let line: Vec<String> = self.values.row(r).iter().map(|v| format!("{v:?}")).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }

    /// Binary 8-bit greyscale PGM with value `round(255 · P(Undef))`.
    pub fn to_pgm(&self) -> Vec<u8> {
        let n = self.resolution;
        let mut out = format!("P5\n{n} {n}\n255\n").into_bytes();
        out.extend(self.values.data().iter().map(|v| (255.0 * v.clamp(0.0, 1.0)).round() as u8));
        out
    }

    /// Mean value and fraction above `threshold` over cells farther than
    /// `radius` from `center`; `None` when no cell qualifies.
    pub fn far_field(&self, center: [f64; 2], radius: f64, threshold: f64) -> Option<(f64, f64)> {
        let mut sum = 0.0;
        let mut above = 0usize;
        let mut count = 0usize;
        for r in 0..self.resolution {
            for c in 0..self.resolution {
                let [x, y] = self.cell_center(r, c);
                if (x - center[0]).hypot(y - center[1]) > radius {
                    let v = self.values.at(r, c);
                    sum += v;
                    above += usize::from(v > threshold);
                    count += 1;
                }
            }
        }
        (count > 0).then(|| (sum / count as f64, above as f64 / count as f64))
    }
}

fn grid_center(b: &Bounds, res: usize, row: usize, col: usize) -> [f64; 2] {
    let dx = (b.x_max - b.x_min) / res as f64;
    let dy = (b.y_max - b.y_min) / res as f64;
    [b.x_min + (col as f64 + 0.5) * dx, b.y_max - (row as f64 + 0.5) * dy]
}

/// Evaluates [`undef_score`] at the centres of a `resolution × resolution` grid.
pub fn heatmap_grid(
    model: &MlpConfig,
    ensemble: &PosteriorEnsemble,
    annotators: u32,
    bounds: Bounds,
    resolution: usize,
) -> Result<Heatmap> {
    if resolution < 2 {
        return Err(Error::InvalidArgument("heatmap resolution must be at least 2".into()));
    }
    if !(bounds.x_max > bounds.x_min && bounds.y_max > bounds.y_min) {
        return Err(Error::InvalidArgument(format!("degenerate heatmap bounds {bounds:?}")));
    }
    let mut rows = Vec::with_capacity(resolution * resolution);
    for r in 0..resolution {
        for c in 0..resolution {
            rows.push(grid_center(&bounds, resolution, r, c));
        }
    }
    let x = Tensor::from_rows(&rows)?;
    let values = undef_score(model, ensemble, &x, annotators)?;
    Ok(Heatmap {
        bounds,
        resolution,
        values: Tensor::new(vec![resolution, resolution], values)?,
    })
}

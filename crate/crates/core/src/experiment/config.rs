use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::curation::CurationConfig;
use crate::data::{
    blobs_ood, feature_mean, gaussian_ood, isotropic_scale, make_moons, make_ring, rademacher_ood, LabeledDataset,
    UnlabeledDataset,
};
use crate::error::{Error, Result};
use crate::eval::{Bounds, ScoreKind};
use crate::model::MlpConfig;
use crate::sampler::{AdamConfig, BatchSizes, CsgldConfig};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Bayesian network on inliers only.
    Bnn,
    /// Outlier exposure with a uniform-target penalty.
    Oe,
    /// Curation likelihood over inliers and outliers.
    Ours,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Bnn => "bnn",
            Method::Oe => "oe",
            Method::Ours => "ours",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum OptimizerConfig {
    Adam(AdamConfig),
    Csgld(CsgldConfig),
}

/// Two-moons inliers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MoonsSpec {
    pub n_per_class: usize,
    pub noise: f64,
}

/// Where a test set is centred.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Anchor {
    /// Feature mean of the training inliers.
    DataMean,
    Point(Vec<f64>),
}

/// Spread of a test set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    Fixed(f64),
    /// Multiple of the isotropic standard deviation of the training inliers.
    DataStd(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OodSpec {
    Ring { n: usize, radius: f64, center: [f64; 2], noise: f64 },
    Gaussian { n: usize, center: Anchor, sigma: Scale },
    Rademacher { n: usize, center: Anchor, scale: Scale },
    Blobs { n: usize, centers: Vec<Vec<f64>>, std: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NamedOod {
    pub name: String,
    pub generator: OodSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub train_in: MoonsSpec,
    #[serde(default)]
    pub train_out: Option<OodSpec>,
    pub test_in: MoonsSpec,
    #[serde(default)]
    pub test_ood: Vec<NamedOod>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    #[serde(default = "default_score_kinds")]
    pub score_kinds: Vec<ScoreKind>,
    /// Target OOD detection rate, in percent, for the false-positive metric.
    #[serde(default = "default_n_percent")]
    pub n_percent: f64,
    /// Score kind used in the comparison table.
    #[serde(default = "default_report_score")]
    pub report_score: ScoreKind,
}

fn default_score_kinds() -> Vec<ScoreKind> {
    vec![ScoreKind::EntropyClasses]
}
fn default_n_percent() -> f64 {
    95.0
}
fn default_report_score() -> ScoreKind {
    ScoreKind::EntropyClasses
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            score_kinds: default_score_kinds(),
            n_percent: default_n_percent(),
            report_score: default_report_score(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeatmapConfig {
    #[serde(default = "default_bounds")]
    pub bounds: Bounds,
    #[serde(default = "default_resolution")]
    pub resolution: usize,
    /// Cells farther than this from the inlier centroid form the far field.
    #[serde(default = "default_far_radius")]
    pub far_radius: f64,
    #[serde(default = "default_undef_threshold")]
    pub undef_threshold: f64,
}

fn default_bounds() -> Bounds {
    Bounds { x_min: -3.0, x_max: 4.0, y_min: -3.25, y_max: 3.75 }
}
fn default_resolution() -> usize {
    100
}
fn default_far_radius() -> f64 {
    1.5
}
fn default_undef_threshold() -> f64 {
    0.5
}

impl Default for HeatmapConfig {
    fn default() -> Self {
        HeatmapConfig {
            bounds: default_bounds(),
            resolution: default_resolution(),
            far_radius: default_far_radius(),
            undef_threshold: default_undef_threshold(),
        }
    }
}

fn default_lambda_oe() -> f64 {
    0.5
}
fn default_seeds() -> Vec<u64> {
    (0..6).collect()
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

/// One method on one experiment, run over a list of seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    pub experiment: String,
    pub method: Method,
    /// Run directory name; defaults to the method name.
    #[serde(default)]
    pub label: Option<String>,
    pub model: MlpConfig,
    #[serde(default)]
    pub curation: CurationConfig,
    /// Weight of the uniform-target penalty for the `oe` method.
    #[serde(default = "default_lambda_oe")]
    pub lambda_oe: f64,
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub batch: BatchSizes,
    pub data: DataConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub heatmap: HeatmapConfig,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn valid_name(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        Self::from_json(&fs::read_to_string(path)?).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn label(&self) -> &str {
        self.label.as_deref().unwrap_or(self.method.as_str())
    }

    /// Whether training draws outlier batches.
    pub fn uses_outliers(&self) -> bool {
        match self.method {
            Method::Bnn => false,
            Method::Oe => self.lambda_oe > 0.0,
            Method::Ours => self.curation.lambda > 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.version != CONFIG_VERSION {
            return bad(format!("unsupported config version {}, expected {CONFIG_VERSION}", self.version));
        }
        if !valid_name(&self.experiment) {
            return bad(format!("experiment name {:?} must be non-empty [A-Za-z0-9_-]", self.experiment));
        }
        if !valid_name(self.label()) || self.label() == "data" {
            return bad(format!("label {:?} must be non-empty [A-Za-z0-9_-] and not \"data\"", self.label()));
        }
        self.model.validate()?;
        self.curation.validate()?;
        match (&self.method, &self.optimizer) {
            (Method::Oe, OptimizerConfig::Csgld(_)) => {
                return bad("method oe is trained with adam".into());
            }
            (_, OptimizerConfig::Adam(a)) => a.validate()?,
            (_, OptimizerConfig::Csgld(c)) => c.validate()?,
        }
        if self.uses_outliers() && self.data.train_out.is_none() {
            return bad(format!("method {} needs data.train_out", self.method.as_str()));
        }
        if self.method == Method::Oe && !(self.lambda_oe >= 0.0) {
            return bad(format!("lambda_oe must be >= 0, got {}", self.lambda_oe));
        }
        if self.batch.inlier == 0 || (self.uses_outliers() && self.batch.outlier == 0) {
            return bad("batch sizes must be positive".into());
        }
        let d = &self.data;
        for (what, m) in [("train_in", &d.train_in), ("test_in", &d.test_in)] {
            if m.n_per_class == 0 || !(m.noise >= 0.0) {
                return bad(format!("data.{what} needs n_per_class >= 1 and noise >= 0"));
            }
        }
        if self.model.input_dim != 2 || self.model.num_classes != 2 {
            return bad("two-moons data needs input_dim 2 and num_classes 2".into());
        }
        let mut names = BTreeSet::new();
        for t in &d.test_ood {
            if !valid_name(&t.name) || t.name == "in" || !names.insert(t.name.as_str()) {
                return bad(format!("test set name {:?} must be unique, [A-Za-z0-9_-] and not \"in\"", t.name));
            }
        }
        for spec in d.train_out.iter().chain(d.test_ood.iter().map(|t| &t.generator)) {
            check_spec(spec, self.model.input_dim)?;
        }
        let e = &self.eval;
        if e.score_kinds.is_empty() || !e.score_kinds.contains(&e.report_score) {
            return bad("eval.score_kinds must be non-empty and include eval.report_score".into());
        }
        if !(0.0..=100.0).contains(&e.n_percent) {
            return bad(format!("eval.n_percent must be in [0, 100], got {}", e.n_percent));
        }
        if self.heatmap.resolution < 2 || !(self.heatmap.far_radius >= 0.0) {
            return bad("heatmap.resolution must be >= 2 and far_radius >= 0".into());
        }
        let b = &self.heatmap.bounds;
        if !(b.x_max > b.x_min && b.y_max > b.y_min) {
            return bad(format!("degenerate heatmap bounds {b:?}"));
        }
        if self.seeds.is_empty() {
            return bad("seeds must not be empty".into());
        }
        if self.seeds.iter().collect::<BTreeSet<_>>().len() != self.seeds.len() {
            return bad("seeds must be distinct".into());
        }
        Ok(())
    }

    /// SHA-256 of the canonical config JSON, excluding `seeds` and `output_dir`.
    pub fn config_hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        let obj = v.as_object_mut().expect("object");
        obj.remove("seeds");
        obj.remove("output_dir");
        sha256_hex(&serde_json::to_vec(&v).expect("value serializes"))
    }

    /// SHA-256 of the canonical `data` section.
    pub fn data_hash(&self) -> String {
        let v = serde_json::to_value(&self.data).expect("data serializes");
        sha256_hex(&serde_json::to_vec(&v).expect("value serializes"))
    }
}

fn check_spec(spec: &OodSpec, dim: usize) -> Result<()> {
    let bad = |m: String| Err(Error::Config(m));
    let positive = |s: &Scale| match s {
        Scale::Fixed(v) | Scale::DataStd(v) => *v > 0.0,
    };
    let anchor_ok = |a: &Anchor| match a {
        Anchor::DataMean => true,
        Anchor::Point(p) => p.len() == dim,
    };
    match spec {
        OodSpec::Ring { n, radius, noise, .. } => {
            if *n == 0 || !(*radius > 0.0) || !(*noise >= 0.0) {
                return bad("ring needs n >= 1, radius > 0 and noise >= 0".into());
            }
        }
        OodSpec::Gaussian { n, center, sigma } => {
            if *n == 0 || !positive(sigma) || !anchor_ok(center) {
                return bad(format!("gaussian needs n >= 1, sigma > 0 and a {dim}-d center"));
            }
        }
        OodSpec::Rademacher { n, center, scale } => {
            if *n == 0 || !positive(scale) || !anchor_ok(center) {
                return bad(format!("rademacher needs n >= 1, scale > 0 and a {dim}-d center"));
            }
        }
        OodSpec::Blobs { n, centers, std } => {
            if *n == 0 || centers.is_empty() || centers.iter().any(|c| c.len() != dim) || !(*std >= 0.0) {
                return bad(format!("blobs needs n >= 1, std >= 0 and {dim}-d centers"));
            }
        }
    }
    Ok(())
}

/// Statistics of the training inliers that test generators may refer to.
#[derive(Debug, Clone, PartialEq)]
pub struct DataReference {
    pub mean: Vec<f64>,
    pub std: f64,
}

impl DataReference {
    pub fn of(d: &LabeledDataset) -> Self {
        DataReference { mean: feature_mean(&d.x), std: isotropic_scale(&d.x) }
    }

    fn anchor(&self, a: &Anchor) -> Vec<f64> {
        match a {
            Anchor::DataMean => self.mean.clone(),
            Anchor::Point(p) => p.clone(),
        }
    }

    fn scale(&self, s: Scale) -> f64 {
        match s {
            Scale::Fixed(v) => v,
            Scale::DataStd(f) => f * self.std,
        }
    }
}

pub fn generate_moons(spec: &MoonsSpec, seed: u64) -> Result<LabeledDataset> {
    make_moons(spec.n_per_class, spec.noise, seed)
}

pub fn generate_ood(spec: &OodSpec, reference: &DataReference, seed: u64) -> Result<UnlabeledDataset> {
    match spec {
        OodSpec::Ring { n, radius, center, noise } => make_ring(*n, *radius, *center, *noise, seed),
        OodSpec::Gaussian { n, center, sigma } => {
            gaussian_ood(*n, reference.scale(*sigma), &reference.anchor(center), seed)
        }
        OodSpec::Rademacher { n, center, scale } => {
            rademacher_ood(*n, reference.scale(*scale), &reference.anchor(center), seed)
        }
        OodSpec::Blobs { n, centers, std } => blobs_ood(*n, centers, *std, seed),
    }
}

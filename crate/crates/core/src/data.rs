//! Synthetic datasets, mini-batch streams and CSV persistence.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{Error, Result};
use crate::params::write_atomic;
use crate::tensor::Tensor;

/// Inlier points with class labels in `0..num_classes`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub x: Tensor,
    pub y: Vec<usize>,
    pub num_classes: usize,
}

/// Points without labels (proxy outliers or test OOD sets).
#[derive(Debug, Clone, PartialEq)]
pub struct UnlabeledDataset {
    pub x: Tensor,
}

impl LabeledDataset {
    pub fn new(x: Tensor, y: Vec<usize>, num_classes: usize) -> Result<Self> {
        if x.rank() != 2 || x.rows() == 0 {
            return Err(Error::Empty("labeled dataset"));
        }
        if x.rows() != y.len() {
            return Err(Error::shape("dataset", format!("{} rows, {} labels", x.rows(), y.len())));
        }
        if let Some(&bad) = y.iter().find(|&&l| l >= num_classes) {
            return Err(Error::LabelOutOfRange { label: bad, classes: num_classes });
        }
        Ok(LabeledDataset { x, y, num_classes })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.cols()
    }
}

impl UnlabeledDataset {
    pub fn new(x: Tensor) -> Result<Self> {
        if x.rank() != 2 || x.rows() == 0 {
            return Err(Error::Empty("unlabeled dataset"));
        }
        Ok(UnlabeledDataset { x })
    }

    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.rows() == 0
    }
}

/// Per-coordinate mean of a point cloud.
pub fn feature_mean(x: &Tensor) -> Vec<f64> {
    let (n, d) = (x.rows(), x.cols());
    let mut m = vec![0.0; d];
    for row in x.data().chunks(d) {
        for (a, v) in m.iter_mut().zip(row) {
            *a += v;
        }
    }
    m.iter_mut().for_each(|a| *a /= n as f64);
    m
}

/// Per-coordinate population standard deviation.
pub fn feature_std(x: &Tensor) -> Vec<f64> {
    let (n, d) = (x.rows(), x.cols());
    let m = feature_mean(x);
    let mut var = vec![0.0; d];
    for row in x.data().chunks(d) {
        for ((s, v), mu) in var.iter_mut().zip(row).zip(&m) {
            *s += (v - mu) * (v - mu);
        }
    }
    var.iter().map(|s| (s / n as f64).sqrt()).collect()
}

/// Single isotropic scale for a point cloud: root of the mean coordinate variance.
pub fn isotropic_scale(x: &Tensor) -> f64 {
    let s = feature_std(x);
    (s.iter().map(|v| v * v).sum::<f64>() / s.len() as f64).sqrt()
}

/// SplitMix64 finaliser; derives independent stream seeds from one base seed.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Noise-free point on one of the two moons at parameter `t ∈ [0, π]`.
pub fn moon_point(class: usize, t: f64) -> [f64; 2] {
    if class == 0 {
        [t.cos(), t.sin()]
    } else {
        [1.0 - t.cos(), 0.5 - t.sin()]
    }
}

fn normal(std: f64) -> Result<Normal<f64>> {
    Normal::new(0.0, std).map_err(|e| Error::InvalidArgument(format!("normal std {std}: {e}")))
}

/// Two interleaving half circles, `n_per_class` points each (class 0 first).
pub fn make_moons(n_per_class: usize, noise_std: f64, seed: u64) -> Result<LabeledDataset> {
    if n_per_class == 0 {
        return Err(Error::InvalidArgument("n_per_class must be at least 1".into()));
    }
    if !(noise_std >= 0.0) {
        return Err(Error::InvalidArgument(format!("noise_std must be >= 0, got {noise_std}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = normal(noise_std)?;
    let mut data = Vec::with_capacity(4 * n_per_class);
    let mut y = Vec::with_capacity(2 * n_per_class);
    for class in 0..2 {
        for _ in 0..n_per_class {
            let t = rng.random_range(0.0..=PI);
            let [a, b] = moon_point(class, t);
            data.push(a + noise.sample(&mut rng));
            data.push(b + noise.sample(&mut rng));
            y.push(class);
        }
    }
    LabeledDataset::new(Tensor::new(vec![2 * n_per_class, 2], data)?, y, 2)
}

/// Points on a circle around `center`, with isotropic noise.
pub fn make_ring(n: usize, radius: f64, center: [f64; 2], noise_std: f64, seed: u64) -> Result<UnlabeledDataset> {
    if !(radius > 0.0) {
        return Err(Error::InvalidArgument(format!("radius must be > 0, got {radius}")));
    }
    if !(noise_std >= 0.0) {
        return Err(Error::InvalidArgument(format!("noise_std must be >= 0, got {noise_std}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = normal(noise_std)?;
    let mut data = Vec::with_capacity(2 * n);
    for _ in 0..n {
        let theta = rng.random_range(0.0..2.0 * PI);
        data.push(center[0] + radius * theta.cos() + noise.sample(&mut rng));
        data.push(center[1] + radius * theta.sin() + noise.sample(&mut rng));
    }
    UnlabeledDataset::new(Tensor::new(vec![n, 2], data)?)
}

/// Isotropic Gaussian cloud around `center`.
pub fn gaussian_ood(n: usize, sigma: f64, center: &[f64], seed: u64) -> Result<UnlabeledDataset> {
    if !(sigma > 0.0) {
        return Err(Error::InvalidArgument(format!("sigma must be > 0, got {sigma}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(n * center.len());
    for _ in 0..n {
        for &c in center {
            let z: f64 = StandardNormal.sample(&mut rng);
            data.push(c + sigma * z);
        }
    }
    UnlabeledDataset::new(Tensor::new(vec![n, center.len()], data)?)
}

/// Each coordinate is `center ± scale` with equal probability.
pub fn rademacher_ood(n: usize, scale: f64, center: &[f64], seed: u64) -> Result<UnlabeledDataset> {
    if !(scale > 0.0) {
        return Err(Error::InvalidArgument(format!("scale must be > 0, got {scale}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(n * center.len());
    for _ in 0..n {
        for &c in center {
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            data.push(c + sign * scale);
        }
    }
    UnlabeledDataset::new(Tensor::new(vec![n, center.len()], data)?)
}

/// Equal-weight mixture of isotropic Gaussian blobs.
pub fn blobs_ood(n: usize, centers: &[Vec<f64>], blob_std: f64, seed: u64) -> Result<UnlabeledDataset> {
    let dim = centers.first().ok_or(Error::Empty("blob centers"))?.len();
    if centers.iter().any(|c| c.len() != dim) {
        return Err(Error::shape("blobs_ood", "centers differ in dimension"));
    }
    if !(blob_std >= 0.0) {
        return Err(Error::InvalidArgument(format!("blob_std must be >= 0, got {blob_std}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = normal(blob_std)?;
    let mut data = Vec::with_capacity(n * dim);
    for _ in 0..n {
        let c = &centers[rng.random_range(0..centers.len())];
        for &v in c {
            data.push(v + noise.sample(&mut rng));
        }
    }
    UnlabeledDataset::new(Tensor::new(vec![n, dim], data)?)
}

/// One training step's worth of data.
#[derive(Debug, Clone)]
pub struct Batch {
    pub epoch: usize,
    /// Position of this batch within its epoch.
    pub step_in_epoch: usize,
    pub last_in_epoch: bool,
    pub in_indices: Vec<usize>,
    pub out_indices: Vec<usize>,
    pub x_in: Tensor,
    pub y_in: Vec<usize>,
    pub x_out: Option<Tensor>,
}

/// Endless stream of (inlier, outlier) mini-batches.
///
/// Inliers are reshuffled every epoch and each epoch visits every inlier once,
/// ending with a short batch when `n_in` does not divide the dataset. The
/// outlier stream keeps its own permutation and position across epochs and is
/// reshuffled only when exhausted.
pub struct BatchStream<'a> {
    d_in: &'a LabeledDataset,
    d_out: Option<&'a UnlabeledDataset>,
    n_in: usize,
    n_out: usize,
    rng_in: ChaCha8Rng,
    rng_out: ChaCha8Rng,
    perm_in: Vec<usize>,
    pos_in: usize,
    step_in_epoch: usize,
    epoch: usize,
    perm_out: Vec<usize>,
    pos_out: usize,
}

pub fn batch_stream<'a>(
    d_in: &'a LabeledDataset,
    d_out: Option<&'a UnlabeledDataset>,
    n_in: usize,
    n_out: usize,
    seed: u64,
) -> Result<BatchStream<'a>> {
    if n_in == 0 || n_in > d_in.len() {
        return Err(Error::InvalidArgument(format!(
            "inlier batch size {n_in} must be in 1..={}",
            d_in.len()
        )));
    }
    if n_out > 0 && d_out.is_none() {
        return Err(Error::InvalidArgument("outlier batch size > 0 with no outlier data".into()));
    }
    let mut rng_in = ChaCha8Rng::seed_from_u64(seed);
    let mut rng_out = ChaCha8Rng::seed_from_u64(seed);
    rng_out.set_stream(1);
    let mut perm_in: Vec<usize> = (0..d_in.len()).collect();
    perm_in.shuffle(&mut rng_in);
    let mut perm_out: Vec<usize> = (0..d_out.map_or(0, |d| d.len())).collect();
    perm_out.shuffle(&mut rng_out);
    Ok(BatchStream {
        d_in,
        d_out: if n_out > 0 { d_out } else { None },
        n_in,
        n_out,
        rng_in,
        rng_out,
        perm_in,
        pos_in: 0,
        step_in_epoch: 0,
        epoch: 0,
        perm_out,
        pos_out: 0,
    })
}

impl BatchStream<'_> {
    pub fn batches_per_epoch(&self) -> usize {
        self.d_in.len().div_ceil(self.n_in)
    }

    fn next_outliers(&mut self) -> Vec<usize> {
        let mut idx = Vec::with_capacity(self.n_out);
        while idx.len() < self.n_out {
            if self.pos_out == self.perm_out.len() {
                self.perm_out.shuffle(&mut self.rng_out);
                self.pos_out = 0;
            }
            idx.push(self.perm_out[self.pos_out]);
            self.pos_out += 1;
        }
        idx
    }
}

impl Iterator for BatchStream<'_> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        if self.pos_in == self.perm_in.len() {
            self.perm_in.shuffle(&mut self.rng_in);
            self.pos_in = 0;
            self.step_in_epoch = 0;
            self.epoch += 1;
        }
        let end = (self.pos_in + self.n_in).min(self.perm_in.len());
        let in_indices = self.perm_in[self.pos_in..end].to_vec();
        self.pos_in = end;
        let out_indices = if self.d_out.is_some() { self.next_outliers() } else { Vec::new() };
        let batch = Batch {
            epoch: self.epoch,
            step_in_epoch: self.step_in_epoch,
            last_in_epoch: self.pos_in == self.perm_in.len(),
            x_in: self.d_in.x.select_rows(&in_indices),
            y_in: in_indices.iter().map(|&i| self.d_in.y[i]).collect(),
            x_out: self.d_out.map(|d| d.x.select_rows(&out_indices)),
            in_indices,
            out_indices,
        };
        self.step_in_epoch += 1;
        Some(batch)
    }
}

/// A dataset read back from CSV.
#[derive(Debug, Clone, PartialEq)]
pub enum CsvDataset {
    Labeled(LabeledDataset),
    Unlabeled(UnlabeledDataset),
}

pub(crate) fn csv_text(x: &Tensor, y: Option<&[usize]>) -> String {
    let d = x.cols();
    let mut header: Vec<String> = (0..d).map(|j| format!("x{j}")).collect();
    if y.is_some() {
        header.push("label".into());
    }
    let mut out = header.join(",");
    out.push('\n');
    for i in 0..x.rows() {
        let mut fields: Vec<String> = x.row(i).iter().map(|v| format!("{v:?}")).collect();
        if let Some(y) = y {
            fields.push(y[i].to_string());
        }
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

pub fn csv_save_labeled(d: &LabeledDataset, path: &Path) -> Result<()> {
    write_atomic(path, csv_text(&d.x, Some(&d.y)).as_bytes())
}

pub fn csv_save_unlabeled(d: &UnlabeledDataset, path: &Path) -> Result<()> {
    write_atomic(path, csv_text(&d.x, None).as_bytes())
}

/// Reads a dataset; a trailing `label` column makes it labeled. Lines starting
/// with `#` are comments.
pub fn csv_load(path: &Path) -> Result<CsvDataset> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    let text = fs::read_to_string(path)?;
    let err = |line: usize, message: String| Error::Csv {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'));
    let (_, header) = lines.next().ok_or_else(|| err(1, "empty file".into()))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    let labeled = cols.last() == Some(&"label");
    let dim = cols.len() - usize::from(labeled);
    for (j, c) in cols[..dim].iter().enumerate() {
        if *c != format!("x{j}") {
            return Err(err(1, format!("unexpected column name {c:?}")));
        }
    }
    if dim == 0 {
        return Err(err(1, "no feature columns".into()));
    }
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for (i, line) in lines {
        let lineno = i + 1;
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != cols.len() {
            return Err(err(lineno, format!("expected {} columns, found {}", cols.len(), fields.len())));
        }
        for f in &fields[..dim] {
            let v: f64 = f.parse().map_err(|_| err(lineno, format!("invalid number {f:?}")))?;
            if !v.is_finite() {
                return Err(err(lineno, format!("non-finite value {f:?}")));
            }
            data.push(v);
        }
        if labeled {
            let l: usize = fields[dim]
                .parse()
                .map_err(|_| err(lineno, format!("invalid label {:?}", fields[dim])))?;
            labels.push(l);
        }
    }
    let n = data.len() / dim;
    let x = Tensor::new(vec![n, dim], data)?;
    if labeled {
        let classes = labels.iter().max().map_or(0, |m| m + 1).max(2);
        Ok(CsvDataset::Labeled(LabeledDataset::new(x, labels, classes)?))
    } else {
        Ok(CsvDataset::Unlabeled(UnlabeledDataset::new(x)?))
    }
}

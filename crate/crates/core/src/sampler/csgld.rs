//! Cyclical SGLD.
//!
//! The step size follows a cosine schedule restarted every cycle. Early in a
//! cycle the sampler explores without injected noise; after
//! `exploration_fraction` of the cycle Gaussian noise is added and the
//! parameters at the end of the final `samples_per_cycle` epochs are kept as
//! posterior samples.
//!
//! The update for one mini-batch with mean loss `L` (a negative mean
//! log-likelihood) is
//!
//! ```text
//! Δθ = ε/2 · [∇log p(θ) − (N / T) ∇L] + N(0, ε)
//! ```
//!
//! with a Gaussian prior of standard deviation `prior_std` (none = flat) and
//! likelihood temperature `T`.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{check_gradient, curation_bias, BatchSizes, EpochLog, Objective, TrainLog};
use crate::data::{batch_stream, derive_seed, LabeledDataset, UnlabeledDataset};
use crate::error::{Error, Result};
use crate::params::{write_atomic, ParamSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsgldConfig {
    #[serde(default = "default_cycles")]
    pub cycles: usize,
    #[serde(default = "default_epochs_per_cycle")]
    pub epochs_per_cycle: usize,
    /// Step size at the start of each cycle.
    pub initial_step: f64,
    #[serde(default = "default_exploration")]
    pub exploration_fraction: f64,
    #[serde(default = "default_samples")]
    pub samples_per_cycle: usize,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    /// Standard deviation of the Gaussian prior; `None` is a flat prior.
    #[serde(default = "default_prior_std")]
    pub prior_std: Option<f64>,
    /// Dataset size `N` used to scale the mini-batch likelihood; defaults to
    /// the number of inliers.
    #[serde(default)]
    pub dataset_size: Option<usize>,
    /// Disables the injected noise entirely when false.
    #[serde(default = "default_true")]
    pub noise: bool,
    #[serde(default)]
    pub seed: u64,
}

fn default_cycles() -> usize {
    4
}
fn default_epochs_per_cycle() -> usize {
    50
}
fn default_exploration() -> f64 {
    0.8
}
fn default_samples() -> usize {
    3
}
fn default_temperature() -> f64 {
    1.0
}
fn default_prior_std() -> Option<f64> {
    Some(1.0)
}
fn default_true() -> bool {
    true
}

impl CsgldConfig {
    pub fn new(initial_step: f64) -> Self {
        CsgldConfig {
            cycles: default_cycles(),
            epochs_per_cycle: default_epochs_per_cycle(),
            initial_step,
            exploration_fraction: default_exploration(),
            samples_per_cycle: default_samples(),
            temperature: default_temperature(),
            prior_std: default_prior_std(),
            dataset_size: None,
            noise: true,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.initial_step > 0.0) {
            return bad(format!("initial_step must be > 0, got {}", self.initial_step));
        }
        if !(self.temperature > 0.0) {
            return bad(format!("temperature must be > 0, got {}", self.temperature));
        }
        if let Some(s) = self.prior_std {
            if !(s > 0.0) {
                return bad(format!("prior_std must be > 0, got {s}"));
            }
        }
        if !(0.0..1.0).contains(&self.exploration_fraction) {
            return bad(format!("exploration_fraction must be in [0, 1), got {}", self.exploration_fraction));
        }
        if self.cycles == 0 || self.epochs_per_cycle == 0 {
            return bad("cycles and epochs_per_cycle must be at least 1".into());
        }
        if self.samples_per_cycle == 0 || self.samples_per_cycle > self.epochs_per_cycle {
            return bad(format!(
                "samples_per_cycle must be in 1..={}, got {}",
                self.epochs_per_cycle, self.samples_per_cycle
            ));
        }
        Ok(())
    }
}

/// Cosine cyclical step size: `ε0/2 · (cos(π · (k mod K) / K) + 1)`.
pub fn csgld_stepsize(k: usize, iters_per_cycle: usize, initial_step: f64) -> f64 {
    assert!(iters_per_cycle >= 1, "cycle length must be at least 1");
    let phase = (k % iters_per_cycle) as f64 / iters_per_cycle as f64;
    initial_step / 2.0 * ((std::f64::consts::PI * phase).cos() + 1.0)
}

/// Applies one Langevin update given the gradient of the mean mini-batch loss.
///
/// `likelihood_scale` is `N / T`. Names in `frozen` receive neither drift nor noise.
#[allow(clippy::too_many_arguments)]
pub fn langevin_update(
    params: &mut ParamSet,
    loss_grad: &ParamSet,
    prior_std: Option<f64>,
    likelihood_scale: f64,
    step: f64,
    noise_on: bool,
    rng: &mut ChaCha8Rng,
    frozen: &[&str],
) -> Result<()> {
    params.check_layout(loss_grad, "sgld_step")?;
    let half = step / 2.0;
    // Without prior and noise this is exactly SGD with learning rate `lr`.
    let lr = half * likelihood_scale;
    let decay = prior_std.map(|s| half / (s * s));
    let noise_std = step.sqrt();
    for ((name, p), (_, g)) in params.iter_mut().zip(loss_grad.iter()) {
        if frozen.contains(&name) {
            continue;
        }
        for (theta, &gi) in p.data_mut().iter_mut().zip(g.data()) {
            let old = *theta;
            let mut next = old - lr * gi;
            if let Some(d) = decay {
                next -= d * old;
            }
            if noise_on {
                let z: f64 = StandardNormal.sample(rng);
                next += noise_std * z;
            }
            *theta = next;
        }
    }
    Ok(())
}

/// One SGLD step on a mini-batch; returns the batch loss.
#[allow(clippy::too_many_arguments)]
pub fn sgld_step(
    objective: &dyn Objective,
    params: &mut ParamSet,
    batch: &crate::data::Batch,
    cfg: &CsgldConfig,
    dataset_size: usize,
    step: f64,
    noise_on: bool,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    if !(step > 0.0) {
        return Err(Error::InvalidArgument(format!("step size must be > 0, got {step}")));
    }
    let (loss, grads) = objective.loss_and_grad(params, batch)?;
    check_gradient(&grads, 0, batch.epoch, batch.step_in_epoch)?;
    let scale = dataset_size as f64 / cfg.temperature;
    langevin_update(params, &grads, cfg.prior_std, scale, step, noise_on, rng, &objective.frozen())?;
    Ok(loss)
}

/// A retained posterior sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub params: ParamSet,
    pub cycle: usize,
    /// Epoch index within the cycle, from 0.
    pub epoch: usize,
}

/// Ordered posterior samples.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PosteriorEnsemble {
    pub samples: Vec<Snapshot>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub cycle: usize,
    pub epoch: usize,
}

/// `manifest.json` of a saved ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleManifest {
    pub format: String,
    pub seed: u64,
    pub config_hash: String,
    pub samples: Vec<ManifestEntry>,
}

impl PosteriorEnsemble {
    pub fn single(params: ParamSet) -> Self {
        PosteriorEnsemble {
            samples: vec![Snapshot { params, cycle: 0, epoch: 0 }],
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn params(&self) -> impl Iterator<Item = &ParamSet> {
        self.samples.iter().map(|s| &s.params)
    }

    pub fn check_usable(&self) -> Result<()> {
        let first = self.samples.first().ok_or(Error::Empty("posterior ensemble"))?;
        for s in &self.samples[1..] {
            first.params.check_layout(&s.params, "ensemble")?;
        }
        Ok(())
    }

    pub fn save(&self, dir: &Path, seed: u64, config_hash: &str) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut entries = Vec::with_capacity(self.samples.len());
        for (i, s) in self.samples.iter().enumerate() {
            let file = format!("sample_{i:03}.bin");
            let meta = serde_json::json!({ "config_hash": config_hash, "seed": seed, "cycle": s.cycle, "epoch": s.epoch });
            s.params.save_tagged(&dir.join(&file), meta)?;
            entries.push(ManifestEntry { file, cycle: s.cycle, epoch: s.epoch });
        }
        let manifest = EnsembleManifest {
            format: "ensemble-v1".into(),
            seed,
            config_hash: config_hash.into(),
            samples: entries,
        };
        write_atomic(&dir.join("manifest.json"), &serde_json::to_vec_pretty(&manifest)?)
    }

    pub fn load(dir: &Path) -> Result<(Self, EnsembleManifest)> {
        let path = dir.join("manifest.json");
        if !path.exists() {
            return Err(Error::MissingArtifact(path));
        }
        let manifest: EnsembleManifest = serde_json::from_slice(&fs::read(&path)?)?;
        let mut samples = Vec::with_capacity(manifest.samples.len());
        for e in &manifest.samples {
            samples.push(Snapshot {
                params: ParamSet::load(&dir.join(&e.file))?,
                cycle: e.cycle,
                epoch: e.epoch,
            });
        }
        let ens = PosteriorEnsemble { samples };
        ens.check_usable()?;
        Ok((ens, manifest))
    }
}

/// Runs `cycles × epochs_per_cycle` epochs of cyclical SGLD from `init`.
pub fn run_csgld(
    objective: &dyn Objective,
    init: ParamSet,
    d_in: &LabeledDataset,
    d_out: Option<&UnlabeledDataset>,
    batch: BatchSizes,
    cfg: &CsgldConfig,
) -> Result<(PosteriorEnsemble, TrainLog)> {
    cfg.validate()?;
    let n_out = if objective.uses_outliers() { batch.outlier } else { 0 };
    let mut stream = batch_stream(d_in, d_out, batch.inlier.min(d_in.len()), n_out, derive_seed(cfg.seed, 0))?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 1));
    let per_epoch = stream.batches_per_epoch();
    let iters_per_cycle = cfg.epochs_per_cycle * per_epoch;
    let dataset_size = cfg.dataset_size.unwrap_or(d_in.len());

    let mut params = init;
    let mut ensemble = PosteriorEnsemble::default();
    let mut log = TrainLog::default();
    let mut k = 0usize;
    for cycle in 0..cfg.cycles {
        for epoch in 0..cfg.epochs_per_cycle {
            let mut total = 0.0;
            let mut outlier_batches = 0;
            let mut step = cfg.initial_step;
            let mut noise_on = false;
            for s in 0..per_epoch {
                let b = stream.next().expect("endless stream");
                step = csgld_stepsize(k, iters_per_cycle, cfg.initial_step);
                let phase = (k % iters_per_cycle) as f64 / iters_per_cycle as f64;
                noise_on = cfg.noise && phase >= cfg.exploration_fraction;
                let loss = sgld_step(objective, &mut params, &b, cfg, dataset_size, step, noise_on, &mut rng)
                    .map_err(|e| match e {
                        Error::Divergence { reason, .. } => Error::Divergence { cycle, epoch, step: s, reason },
                        other => other,
                    })?;
                total += loss;
                outlier_batches += usize::from(b.x_out.is_some());
                k += 1;
            }
            log.epochs.push(EpochLog {
                cycle,
                epoch,
                mean_loss: total / per_epoch as f64,
                c: curation_bias(&params),
                inlier_batches: per_epoch,
                outlier_batches,
                step_size: step,
                noise: noise_on,
            });
            if epoch >= cfg.epochs_per_cycle - cfg.samples_per_cycle {
                ensemble.samples.push(Snapshot { params: params.clone(), cycle, epoch });
            }
        }
    }
    Ok((ensemble, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn stepsize_schedule() {
        let eps0 = 0.2;
        assert_eq!(csgld_stepsize(0, 10, eps0), eps0);
        assert_eq!(csgld_stepsize(30, 10, eps0), eps0);
        assert!((csgld_stepsize(5, 10, eps0) - eps0 / 2.0).abs() < 1e-15);
        let k = 99;
        let expected = eps0 / 2.0 * ((std::f64::consts::PI * 99.0 / 100.0).cos() + 1.0);
        assert!((csgld_stepsize(k, 100, eps0) - expected).abs() < 1e-15);
        assert!(csgld_stepsize(999, 1000, eps0) < 1e-5);
    }

    #[test]
    fn schedule_is_periodic_and_non_increasing_within_cycle() {
        let big_k = 37;
        for k in 0..3 * big_k {
            assert_eq!(csgld_stepsize(k, big_k, 1.0), csgld_stepsize(k + big_k, big_k, 1.0));
            if (k + 1) % big_k != 0 {
                assert!(csgld_stepsize(k + 1, big_k, 1.0) <= csgld_stepsize(k, big_k, 1.0));
            }
        }
    }

    fn params(v: &[f64]) -> ParamSet {
        let mut p = ParamSet::new();
        p.insert("w", Tensor::vector(v.to_vec())).unwrap();
        p
    }

    #[test]
    fn temperature_scales_likelihood_drift() {
        let g = params(&[0.3, -1.7]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let n = 1000.0;
        let mut cold = params(&[0.0, 0.0]);
        langevin_update(&mut cold, &g, None, n / 0.1, 1e-4, false, &mut rng, &[]).unwrap();
        let mut warm = params(&[0.0, 0.0]);
        langevin_update(&mut warm, &g, None, n / 1.0, 1e-4, false, &mut rng, &[]).unwrap();
        for (c, w) in cold.get("w").unwrap().data().iter().zip(warm.get("w").unwrap().data()) {
            assert!((c / w - 10.0).abs() < 1e-12);
        }
    }

    #[test]
    fn injected_noise_has_variance_step() {
        let step = 0.04;
        let draws = 100_000;
        let zero = params(&[0.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..draws {
            let mut p = params(&[1.5]);
            langevin_update(&mut p, &zero, None, 1.0, step, true, &mut rng, &[]).unwrap();
            let d = p.get("w").unwrap().item() - 1.5;
            sum += d;
            sum_sq += d * d;
        }
        let mean = sum / draws as f64;
        let var = sum_sq / draws as f64 - mean * mean;
        assert!((var / step - 1.0).abs() < 0.05, "variance {var}");
    }

    #[test]
    fn prior_pulls_toward_zero_and_frozen_is_untouched() {
        let mut p = params(&[2.0]);
        p.insert("c", Tensor::scalar(3.0)).unwrap();
        let g = p.zeros_like();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        langevin_update(&mut p, &g, Some(1.0), 1.0, 0.1, true, &mut rng, &["c"]).unwrap();
        assert_eq!(p.get("c").unwrap().item(), 3.0);
        let mut q = params(&[2.0]);
        langevin_update(&mut q, &params(&[0.0]), Some(2.0), 1.0, 0.1, false, &mut rng, &[]).unwrap();
        assert!((q.get("w").unwrap().item() - (2.0 - 0.05 * 2.0 / 4.0)).abs() < 1e-15);
    }

    #[test]
    fn config_validation() {
        assert!(CsgldConfig::new(1e-3).validate().is_ok());
        assert!(CsgldConfig::new(0.0).validate().is_err());
        assert!(CsgldConfig { temperature: 0.0, ..CsgldConfig::new(1e-3) }.validate().is_err());
        assert!(CsgldConfig { samples_per_cycle: 51, ..CsgldConfig::new(1e-3) }.validate().is_err());
        assert!(CsgldConfig { exploration_fraction: 1.0, ..CsgldConfig::new(1e-3) }.validate().is_err());
        assert!(CsgldConfig { prior_std: Some(-1.0), ..CsgldConfig::new(1e-3) }.validate().is_err());
    }

    #[test]
    fn ensemble_save_load() {
        let dir = tempfile::tempdir().unwrap();
        let ens = PosteriorEnsemble {
            samples: vec![
                Snapshot { params: params(&[1.0, 2.0]), cycle: 0, epoch: 4 },
                Snapshot { params: params(&[3.0, 4.0]), cycle: 1, epoch: 4 },
            ],
        };
        ens.save(dir.path(), 7, "abc").unwrap();
        let (back, manifest) = PosteriorEnsemble::load(dir.path()).unwrap();
        assert_eq!(back, ens);
        assert_eq!(manifest.seed, 7);
        assert_eq!(manifest.samples[1].file, "sample_001.bin");
        assert!(PosteriorEnsemble::default().check_usable().is_err());
    }
}

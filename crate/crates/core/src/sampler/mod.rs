//! Optimisers and posterior samplers.
//!
//! [`adam`] drives the deterministic runs; [`csgld`] draws a posterior
//! ensemble with cyclical stochastic-gradient Langevin dynamics. Both consume
//! an [`Objective`], which turns a parameter set and a mini-batch into a loss
//! (a negative mean log-likelihood) and its gradient.

pub mod adam;
pub mod csgld;
pub mod objective;

use serde::{Deserialize, Serialize};

pub use adam::{adam_step, train_adam, AdamConfig, AdamState};
pub use csgld::{
    csgld_stepsize, langevin_update, run_csgld, sgld_step, CsgldConfig, EnsembleManifest, PosteriorEnsemble,
    Snapshot,
};
pub use objective::{CrossEntropyObjective, CurationObjective, Objective, OutlierExposureObjective};

use crate::error::{Error, Result};
use crate::params::ParamSet;

/// Gradient norm above which training is aborted as divergent.
pub const GRAD_NORM_LIMIT: f64 = 1e6;

/// Mini-batch composition: inliers and outliers per step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatchSizes {
    pub inlier: usize,
    pub outlier: usize,
}

impl Default for BatchSizes {
    fn default() -> Self {
        BatchSizes { inlier: 128, outlier: 256 }
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub cycle: usize,
    pub epoch: usize,
    pub mean_loss: f64,
    /// Curation bias at the end of the epoch.
    pub c: f64,
    pub inlier_batches: usize,
    pub outlier_batches: usize,
    /// Step size of the last step in the epoch.
    pub step_size: f64,
    pub noise: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
}

impl TrainLog {
    pub fn c_trajectory(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.c).collect()
    }

    pub fn total_outlier_batches(&self) -> usize {
        self.epochs.iter().map(|e| e.outlier_batches).sum()
    }
}

pub(crate) fn check_gradient(grads: &ParamSet, cycle: usize, epoch: usize, step: usize) -> Result<()> {
    let norm = grads.l2_norm();
    if !norm.is_finite() || norm > GRAD_NORM_LIMIT {
        return Err(Error::Divergence {
            cycle,
            epoch,
            step,
            reason: format!("gradient norm {norm:e} exceeds {GRAD_NORM_LIMIT:e}"),
        });
    }
    Ok(())
}

pub(crate) fn curation_bias(params: &ParamSet) -> f64 {
    params
        .get(crate::model::CURATION_BIAS)
        .map_or(0.0, |t| t.item())
}

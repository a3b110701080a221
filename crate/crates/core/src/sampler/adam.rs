use serde::{Deserialize, Serialize};

use super::{check_gradient, curation_bias, BatchSizes, EpochLog, Objective, TrainLog};
use crate::data::{batch_stream, LabeledDataset, UnlabeledDataset};
use crate::error::{Error, Result};
use crate::params::ParamSet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
}

fn default_lr() -> f64 {
    5e-3
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}
fn default_epochs() -> usize {
    20
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: default_lr(),
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
            epochs: default_epochs(),
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(Error::InvalidArgument(format!("adam lr must be > 0, got {}", self.lr)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::InvalidArgument(format!("adam {name} must be in [0, 1), got {b}")));
            }
        }
        if !(self.eps > 0.0) {
            return Err(Error::InvalidArgument("adam eps must be > 0".into()));
        }
        Ok(())
    }
}

/// First and second moment estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: ParamSet,
    v: ParamSet,
    step: i32,
}

impl AdamState {
    pub fn new(params: &ParamSet) -> Self {
        AdamState {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
        }
    }

    pub fn steps(&self) -> i32 {
        self.step
    }
}

/// One bias-corrected Adam update, in place. Names in `frozen` are skipped.
pub fn adam_step(
    state: &mut AdamState,
    params: &mut ParamSet,
    grads: &ParamSet,
    cfg: &AdamConfig,
    frozen: &[&str],
) -> Result<()> {
    params.check_layout(grads, "adam_step")?;
    params.check_layout(&state.m, "adam_step")?;
    state.step += 1;
    let bc1 = 1.0 - cfg.beta1.powi(state.step);
    let bc2 = 1.0 - cfg.beta2.powi(state.step);
    let moments = state.m.iter_mut().zip(state.v.iter_mut());
    for (((name, p), (_, g)), ((_, m), (_, v))) in params.iter_mut().zip(grads.iter()).zip(moments) {
        if frozen.contains(&name) {
            continue;
        }
        let p = p.data_mut();
        let (m, v) = (m.data_mut(), v.data_mut());
        for i in 0..p.len() {
            let gi = g.data()[i];
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

/// Trains with Adam for `cfg.epochs` epochs, returning the final parameters.
#[allow(clippy::too_many_arguments)]
pub fn train_adam(
    objective: &dyn Objective,
    init: ParamSet,
    d_in: &LabeledDataset,
    d_out: Option<&UnlabeledDataset>,
    batch: BatchSizes,
    cfg: &AdamConfig,
    seed: u64,
) -> Result<(ParamSet, TrainLog)> {
    cfg.validate()?;
    let n_out = if objective.uses_outliers() { batch.outlier } else { 0 };
    let stream = batch_stream(d_in, d_out, batch.inlier.min(d_in.len()), n_out, seed)?;
    let per_epoch = stream.batches_per_epoch();
    let frozen = objective.frozen();
    let mut params = init;
    let mut state = AdamState::new(&params);
    let mut log = TrainLog::default();
    let mut stream = stream;
    for epoch in 0..cfg.epochs {
        let mut total = 0.0;
        let mut outlier_batches = 0;
        for step in 0..per_epoch {
            let b = stream.next().expect("endless stream");
            let (loss, grads) = objective.loss_and_grad(&params, &b)?;
            check_gradient(&grads, 0, epoch, step)?;
            adam_step(&mut state, &mut params, &grads, cfg, &frozen)?;
            total += loss;
            outlier_batches += usize::from(b.x_out.is_some());
        }
        log.epochs.push(EpochLog {
            cycle: 0,
            epoch,
            mean_loss: total / per_epoch as f64,
            c: curation_bias(&params),
            inlier_batches: per_epoch,
            outlier_batches,
            step_size: cfg.lr,
            noise: false,
        });
    }
    Ok((params, log))
}

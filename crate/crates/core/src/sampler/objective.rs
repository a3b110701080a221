//! Training objectives for the three methods.

use crate::autodiff::Tape;
use crate::curation::{hendrycks_oe_loss, oe_objective, CurationConfig};
use crate::data::Batch;
use crate::error::Result;
use crate::model::{MlpConfig, CURATION_BIAS};
use crate::params::ParamSet;

/// A per-batch loss: the negative of a mean log-likelihood.
pub trait Objective {
    fn loss_and_grad(&self, params: &ParamSet, batch: &Batch) -> Result<(f64, ParamSet)>;

    /// Whether batches should carry outliers.
    fn uses_outliers(&self) -> bool;

    /// Parameters the optimiser must leave untouched.
    fn frozen(&self) -> Vec<&'static str>;
}

/// Curated-label likelihood with outlier exposure.
#[derive(Debug, Clone)]
pub struct CurationObjective {
    pub model: MlpConfig,
    pub curation: CurationConfig,
}

impl Objective for CurationObjective {
    fn loss_and_grad(&self, params: &ParamSet, batch: &Batch) -> Result<(f64, ParamSet)> {
        let mut tape = Tape::new();
        let bound = tape.bind(params)?;
        let x_out = if self.uses_outliers() { batch.x_out.as_ref() } else { None };
        let loss = oe_objective(&mut tape, &bound, &self.model, &batch.x_in, &batch.y_in, x_out, &self.curation)?;
        let grads = tape.backward(loss)?.collect(&tape, &bound)?;
        Ok((tape.value(loss).item(), grads))
    }

    fn uses_outliers(&self) -> bool {
        self.curation.lambda > 0.0
    }

    fn frozen(&self) -> Vec<&'static str> {
        if self.curation.c_learnable {
            Vec::new()
        } else {
            vec![CURATION_BIAS]
        }
    }
}

/// Cross-entropy plus uniform-target cross-entropy on outliers.
#[derive(Debug, Clone)]
pub struct OutlierExposureObjective {
    pub model: MlpConfig,
    pub lambda_oe: f64,
}

impl Objective for OutlierExposureObjective {
    fn loss_and_grad(&self, params: &ParamSet, batch: &Batch) -> Result<(f64, ParamSet)> {
        let mut tape = Tape::new();
        let bound = tape.bind(params)?;
        let x_out = if self.uses_outliers() { batch.x_out.as_ref() } else { None };
        let loss = hendrycks_oe_loss(&mut tape, &bound, &self.model, &batch.x_in, &batch.y_in, x_out, self.lambda_oe)?;
        let grads = tape.backward(loss)?.collect(&tape, &bound)?;
        Ok((tape.value(loss).item(), grads))
    }

    fn uses_outliers(&self) -> bool {
        self.lambda_oe > 0.0
    }

    fn frozen(&self) -> Vec<&'static str> {
        vec![CURATION_BIAS]
    }
}

/// Plain mean cross-entropy; the standard BNN likelihood.
#[derive(Debug, Clone)]
pub struct CrossEntropyObjective {
    pub model: MlpConfig,
}

impl Objective for CrossEntropyObjective {
    fn loss_and_grad(&self, params: &ParamSet, batch: &Batch) -> Result<(f64, ParamSet)> {
        let mut tape = Tape::new();
        let bound = tape.bind(params)?;
        let loss = hendrycks_oe_loss(&mut tape, &bound, &self.model, &batch.x_in, &batch.y_in, None, 0.0)?;
        let grads = tape.backward(loss)?.collect(&tape, &bound)?;
        Ok((tape.value(loss).item(), grads))
    }

    fn uses_outliers(&self) -> bool {
        false
    }

    fn frozen(&self) -> Vec<&'static str> {
        vec![CURATION_BIAS]
    }
}

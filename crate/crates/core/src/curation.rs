//! Generative model of dataset curation.
//!
//! `S` IID annotators label an input; the curated label is their common answer
//! when all agree and `Undef` otherwise. With single-annotator probabilities
//! `p_y`, consensus on `y` has probability `p_y^S` and disagreement has
//! probability `1 - Σ_y p_y^S`. A learned bias `c` shifts the log-odds of
//! `Undef`, and the outlier-exposure objective fits inliers to their class and
//! proxy outliers to `Undef`.
//!
//! Throughout, `Undef` is encoded as class index `C`.

use serde::{Deserialize, Serialize};

use crate::autodiff::{BoundParams, Tape, Var};
use crate::error::{Error, Result};
use crate::model::{MlpConfig, PredictiveDist, CURATION_BIAS};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurationConfig {
    /// Number of annotators, `S`.
    #[serde(default = "default_annotators")]
    pub annotators: u32,
    /// Weight of the outlier term.
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default = "default_true")]
    pub c_learnable: bool,
}

fn default_annotators() -> u32 {
    10
}
fn default_lambda() -> f64 {
    1.0
}
fn default_true() -> bool {
    true
}

impl Default for CurationConfig {
    fn default() -> Self {
        CurationConfig {
            annotators: default_annotators(),
            lambda: default_lambda(),
            c_learnable: true,
        }
    }
}

impl CurationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.annotators < 1 {
            return Err(Error::InvalidArgument("annotator count must be at least 1".into()));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidArgument(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CuratedLabel {
    Class(usize),
    Undef,
}

impl CuratedLabel {
    /// Index form, with `Undef` mapped to `num_classes`.
    pub fn index(self, num_classes: usize) -> usize {
        match self {
            CuratedLabel::Class(k) => k,
            CuratedLabel::Undef => num_classes,
        }
    }
}

/// The curated label produced by a set of annotator labels.
pub fn consensus_label(labels: &[usize]) -> Result<CuratedLabel> {
    let (&first, rest) = labels.split_first().ok_or(Error::Empty("annotator labels"))?;
    if rest.iter().all(|&l| l == first) {
        Ok(CuratedLabel::Class(first))
    } else {
        Ok(CuratedLabel::Undef)
    }
}

/// `log P(Y = y) = S · log p_y`.
pub fn log_consensus_prob(tape: &mut Tape, log_p: Var, annotators: u32) -> Result<Var> {
    tape.scale(log_p, f64::from(annotators))
}

/// `log P(Undef) = log(1 - Σ_y p_y^S)` as an `n × 1` column.
pub fn log_undef_prob(tape: &mut Tape, log_p: Var, annotators: u32) -> Result<Var> {
    let consensus = log_consensus_prob(tape, log_p, annotators)?;
    let log_agree = tape.logsumexp_rows(consensus)?;
    tape.log1mexp(log_agree)
}

/// Largest number of annotator tuples [`enumeration_oracle`] will visit.
pub const ENUMERATION_LIMIT: u64 = 1_000_000;

/// Brute-force curated label distribution: sums the probability of every one
/// of the `C^S` annotator tuples, assigning unanimous tuples to their class and
/// the rest to `Undef` (last entry).
pub fn enumeration_oracle(p: &[f64], annotators: u32) -> Result<Vec<f64>> {
    let c = p.len();
    if c == 0 {
        return Err(Error::Empty("class distribution"));
    }
    if annotators == 0 {
        return Err(Error::InvalidArgument("annotator count must be at least 1".into()));
    }
    let tuples = (c as u64)
        .checked_pow(annotators)
        .filter(|&t| t <= ENUMERATION_LIMIT)
        .ok_or_else(|| {
            Error::InvalidArgument(format!("{c}^{annotators} annotator tuples exceeds {ENUMERATION_LIMIT}"))
        })?;
    let s = annotators as usize;
    let mut out = vec![0.0; c + 1];
    let mut tuple = vec![0usize; s];
    for _ in 0..tuples {
        let prob: f64 = tuple.iter().map(|&k| p[k]).product();
        let label = consensus_label(&tuple)?;
        out[label.index(c)] += prob;
        for slot in tuple.iter_mut() {
            *slot += 1;
            if *slot < c {
                break;
            }
            *slot = 0;
        }
    }
    Ok(out)
}

/// Tape nodes of the bias-adjusted `C + 1`-way head.
#[derive(Debug, Clone, Copy)]
pub struct CuratedVars {
    /// `n × 1`
    pub log_undef: Var,
    /// `n × C`
    pub log_class: Var,
}

/// Log-softmax over the logits `[c + log(1 - Σ p^S), S log p_1, …, S log p_C]`.
pub fn curated_log_probs(tape: &mut Tape, log_p: Var, annotators: u32, c: Var) -> Result<CuratedVars> {
    let classes = tape.value(log_p).cols();
    let class_logits = log_consensus_prob(tape, log_p, annotators)?;
    let log_agree = tape.logsumexp_rows(class_logits)?;
    let log_disagree = tape.log1mexp(log_agree)?;
    let undef_logit = tape.add_scalar(log_disagree, c)?;
    let logits = tape.concat_cols(undef_logit, class_logits)?;
    let normalized = tape.log_softmax(logits)?;
    Ok(CuratedVars {
        log_undef: tape.slice_cols(normalized, 0, 1)?,
        log_class: tape.slice_cols(normalized, 1, classes + 1)?,
    })
}

/// Evaluated curated head for a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct CuratedLogProbs {
    /// One entry per row.
    pub log_undef: Vec<f64>,
    /// `n × C`
    pub log_class: Tensor,
}

impl CuratedLogProbs {
    pub fn from_dist(dist: &PredictiveDist, annotators: u32, c: f64) -> Result<Self> {
        let mut tape = Tape::new();
        let lp = tape.leaf(dist.log_p.clone())?;
        let cv = tape.leaf(Tensor::scalar(c))?;
        let vars = curated_log_probs(&mut tape, lp, annotators, cv)?;
        Ok(CuratedLogProbs {
            log_undef: tape.value(vars.log_undef).data().to_vec(),
            log_class: tape.value(vars.log_class).clone(),
        })
    }

    /// Probabilities with `Undef` in the last column, `n × (C + 1)`.
    pub fn probs_with_undef(&self) -> Tensor {
        let (n, c) = (self.log_class.rows(), self.log_class.cols());
        let mut data = Vec::with_capacity(n * (c + 1));
        for i in 0..n {
            data.extend(self.log_class.row(i).iter().map(|v| v.exp()));
            data.push(self.log_undef[i].exp());
        }
        Tensor::new(vec![n, c + 1], data).expect("consistent shape")
    }
}

/// Uncurated `log P(Undef)` per row (the `c = 0` head).
pub fn log_undef_of(dist: &PredictiveDist, annotators: u32) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let lp = tape.leaf(dist.log_p.clone())?;
    let v = log_undef_prob(&mut tape, lp, annotators)?;
    Ok(tape.value(v).data().to_vec())
}

fn require_rows(x: &Tensor, what: &'static str) -> Result<()> {
    if x.rank() != 2 || x.rows() == 0 {
        return Err(Error::Empty(what));
    }
    Ok(())
}

/// Negative outlier-exposure objective, to be minimised:
/// `-(mean_in log P(Y = y) + λ · mean_out log P(Undef))`.
///
/// `x_out` may be `None` only when `λ = 0`.
pub fn oe_objective(
    tape: &mut Tape,
    bound: &BoundParams,
    model: &MlpConfig,
    x_in: &Tensor,
    y_in: &[usize],
    x_out: Option<&Tensor>,
    cfg: &CurationConfig,
) -> Result<Var> {
    require_rows(x_in, "inlier batch")?;
    let c = bound.get(CURATION_BIAS)?;

    let xin = tape.leaf(x_in.clone())?;
    let lp_in = model.forward(tape, bound, xin)?;
    let head_in = curated_log_probs(tape, lp_in, cfg.annotators, c)?;
    let picked = tape.gather(head_in.log_class, y_in)?;
    let term_in = tape.mean(picked)?;

    let objective = if cfg.lambda > 0.0 {
        let x_out = x_out.ok_or(Error::Empty("outlier batch"))?;
        require_rows(x_out, "outlier batch")?;
        let xout = tape.leaf(x_out.clone())?;
        let lp_out = model.forward(tape, bound, xout)?;
        let head_out = curated_log_probs(tape, lp_out, cfg.annotators, c)?;
        let term_out = tape.mean(head_out.log_undef)?;
        let weighted = tape.scale(term_out, cfg.lambda)?;
        tape.add(term_in, weighted)?
    } else {
        term_in
    };
    tape.neg(objective)
}

/// Cross-entropy on inliers plus `λ_OE ×` cross-entropy from the uniform
/// distribution to the predictive on outliers.
pub fn hendrycks_oe_loss(
    tape: &mut Tape,
    bound: &BoundParams,
    model: &MlpConfig,
    x_in: &Tensor,
    y_in: &[usize],
    x_out: Option<&Tensor>,
    lambda_oe: f64,
) -> Result<Var> {
    require_rows(x_in, "inlier batch")?;
    let xin = tape.leaf(x_in.clone())?;
    let lp_in = model.forward(tape, bound, xin)?;
    let picked = tape.gather(lp_in, y_in)?;
    let mean_ll = tape.mean(picked)?;
    let ce_in = tape.neg(mean_ll)?;
    if lambda_oe == 0.0 {
        return Ok(ce_in);
    }
    let x_out = x_out.ok_or(Error::Empty("outlier batch"))?;
    require_rows(x_out, "outlier batch")?;
    let xout = tape.leaf(x_out.clone())?;
    let lp_out = model.forward(tape, bound, xout)?;
    // mean over rows of -(1/C) Σ_y log p_y  ==  -mean over all entries
    let mean_lp = tape.mean(lp_out)?;
    let ce_out = tape.scale(mean_lp, -lambda_oe)?;
    tape.add(ce_in, ce_out)
}

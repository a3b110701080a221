//! Scalar log-domain helpers shared by the tape ops and the evaluation code.

use crate::error::{Error, Result};

/// Inputs to [`log1mexp`] at or above this value are clamped to it, so
/// `log(1 - Σ p^S)` stays finite when the predictive is numerically one-hot.
pub const LOG1MEXP_CLAMP: f64 = -1e-12;

/// Arguments above this are treated as genuine errors rather than rounding
/// noise around zero.
pub const LOG1MEXP_TOLERANCE: f64 = 1e-10;

/// `log Σ exp(x_i)` with max subtraction.
pub fn logsumexp(xs: &[f64]) -> Result<f64> {
    if xs.is_empty() {
        return Err(Error::Empty("logsumexp input"));
    }
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        if m == f64::NEG_INFINITY {
            return Ok(m);
        }
        return Err(Error::NonFinite { op: "logsumexp" });
    }
    let s: f64 = xs.iter().map(|&x| (x - m).exp()).sum();
    Ok(m + s.ln())
}

/// Clamps `a` into the domain [`log1mexp_unclamped`] accepts.
pub fn clamp_log1mexp_arg(a: f64) -> Result<f64> {
    if a.is_nan() || a > LOG1MEXP_TOLERANCE {
        return Err(Error::InvalidArgument(format!(
            "log1mexp requires a < 0, got {a}"
        )));
    }
    Ok(a.min(LOG1MEXP_CLAMP))
}

/// `log(1 - exp(a))` for `a < 0`, switching between the `log1p` and `expm1`
/// forms at `-ln 2`.
pub fn log1mexp_unclamped(a: f64) -> f64 {
    if a < -std::f64::consts::LN_2 {
        (-a.exp()).ln_1p()
    } else {
        (-a.exp_m1()).ln()
    }
}

/// `log(1 - exp(a))` with the clamp applied.
pub fn log1mexp(a: f64) -> Result<f64> {
    Ok(log1mexp_unclamped(clamp_log1mexp_arg(a)?))
}

/// d/da log(1 - e^a) = -1 / (e^{-a} - 1).
pub(crate) fn log1mexp_grad(a: f64) -> f64 {
    -1.0 / (-a).exp_m1()
}

/// Log-sum-exp of two values.
pub fn logaddexp(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Row-wise log-softmax written into `out`.
pub(crate) fn log_softmax_row(row: &[f64], out: &mut [f64]) -> Result<()> {
    let lse = logsumexp(row)?;
    for (o, &x) in out.iter_mut().zip(row) {
        *o = x - lse;
    }
    Ok(())
}

/// Natural-log entropy, with `0 · log 0 = 0`.
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter()
        .filter(|&&v| v > 0.0)
        .map(|&v| v * v.ln())
        .sum::<f64>()
}

//! Out-of-distribution detection from a generative model of data curation.
//!
//! A classifier's per-annotator predictive `p(y | x)` is lifted to a curated
//! label distribution over the `C` classes plus an `Undef` outcome: `S`
//! annotators must agree for a label to exist, and `P(Undef)` is the OOD score.

pub mod autodiff;
pub mod curation;
pub mod data;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod model;
pub mod params;
pub mod sampler;
pub mod stable;
pub mod tensor;

pub use error::{Error, Result};

//! The single-annotator classifier: an MLP producing log class probabilities.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{BoundParams, Tape, Var};
use crate::error::{Error, Result};
use crate::params::ParamSet;
use crate::tensor::Tensor;

/// Name of the learnable bias on the undefined-label logit.
pub const CURATION_BIAS: &str = "curation.c";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpConfig {
    pub input_dim: usize,
    pub hidden_sizes: Vec<usize>,
    pub num_classes: usize,
    #[serde(default)]
    pub activation: Activation,
    #[serde(default)]
    pub init_seed: u64,
}

impl Default for MlpConfig {
    /// The 3 × 32 two-moons network.
    fn default() -> Self {
        MlpConfig {
            input_dim: 2,
            hidden_sizes: vec![32, 32, 32],
            num_classes: 2,
            activation: Activation::Relu,
            init_seed: 0,
        }
    }
}

fn weight_name(layer: usize) -> String {
    format!("layer{layer}.weight")
}

fn bias_name(layer: usize) -> String {
    format!("layer{layer}.bias")
}

/// Log single-annotator probabilities, one row per input.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveDist {
    pub log_p: Tensor,
}

impl PredictiveDist {
    pub fn probs(&self) -> Tensor {
        self.log_p.map(f64::exp)
    }

    pub fn num_classes(&self) -> usize {
        self.log_p.cols()
    }
}

impl MlpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::InvalidArgument("input_dim must be at least 1".into()));
        }
        if self.hidden_sizes.is_empty() {
            return Err(Error::InvalidArgument("at least one hidden layer is required".into()));
        }
        if self.hidden_sizes.contains(&0) {
            return Err(Error::InvalidArgument("hidden sizes must be at least 1".into()));
        }
        if self.num_classes < 2 {
            return Err(Error::InvalidArgument("num_classes must be at least 2".into()));
        }
        Ok(())
    }

    fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = Vec::with_capacity(self.hidden_sizes.len() + 2);
        sizes.push(self.input_dim);
        sizes.extend(&self.hidden_sizes);
        sizes.push(self.num_classes);
        sizes
    }

    pub fn num_layers(&self) -> usize {
        self.hidden_sizes.len() + 1
    }

    /// He-initialised weights, zero biases and a zero curation bias.
    pub fn init(&self) -> Result<ParamSet> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.init_seed);
        let sizes = self.layer_sizes();
        let mut params = ParamSet::new();
        for (layer, pair) in sizes.windows(2).enumerate() {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
            let w = (0..fan_in * fan_out).map(|_| normal.sample(&mut rng)).collect();
            params.insert(weight_name(layer), Tensor::new(vec![fan_in, fan_out], w)?)?;
            params.insert(bias_name(layer), Tensor::zeros(&[fan_out]))?;
        }
        params.insert(CURATION_BIAS, Tensor::scalar(0.0))?;
        Ok(params)
    }

    /// Records the network on `tape`, returning log p as an `n × C` node.
    pub fn forward(&self, tape: &mut Tape, bound: &BoundParams, x: Var) -> Result<Var> {
        let d = tape.value(x);
        if d.rank() != 2 || d.cols() != self.input_dim {
            return Err(Error::shape(
                "forward",
                format!("input {:?} for input_dim {}", d.shape(), self.input_dim),
            ));
        }
        let mut h = x;
        for layer in 0..self.num_layers() {
            let w = bound.get(&weight_name(layer))?;
            let b = bound.get(&bias_name(layer))?;
            h = tape.matmul(h, w)?;
            h = tape.add_row(h, b)?;
            if layer + 1 < self.num_layers() {
                h = match self.activation {
                    Activation::Relu => tape.relu(h)?,
                    Activation::Tanh => tape.tanh(h)?,
                };
            }
        }
        tape.log_softmax(h)
    }

    /// Forward pass on a throwaway tape.
    pub fn predict(&self, params: &ParamSet, x: &Tensor) -> Result<PredictiveDist> {
        let mut tape = Tape::new();
        let bound = tape.bind(params)?;
        let xv = tape.leaf(x.clone())?;
        let out = self.forward(&mut tape, &bound, xv)?;
        Ok(PredictiveDist {
            log_p: tape.value(out).clone(),
        })
    }
}

//! Reverse-mode gradients of the outlier-exposure objective, checked against
//! central differences.

use curation_ood::autodiff::Tape;
use curation_ood::curation::{oe_objective, CurationConfig};
use curation_ood::model::{Activation, MlpConfig, CURATION_BIAS};
use curation_ood::params::ParamSet;
use curation_ood::tensor::Tensor;

fn loss(model: &MlpConfig, p: &ParamSet, x_in: &Tensor, y: &[usize], x_out: &Tensor) -> (f64, ParamSet) {
    let cfg = CurationConfig::default();
    let mut tape = Tape::new();
    let bound = tape.bind(p).unwrap();
    let l = oe_objective(&mut tape, &bound, model, x_in, y, Some(x_out), &cfg).unwrap();
    let g = tape.backward(l).unwrap().collect(&tape, &bound).unwrap();
    (tape.value(l).item(), g)
}

fn main() -> curation_ood::Result<()> {
    let model = MlpConfig { hidden_sizes: vec![4], activation: Activation::Tanh, ..MlpConfig::default() };
    let params = model.init()?;
    let x_in = Tensor::from_rows(&[[0.1, 0.9], [1.2, -0.4], [-0.7, 0.2]])?;
    let y = [0, 1, 0];
    let x_out = Tensor::from_rows(&[[2.5, 2.5], [-2.0, 1.5]])?;

    let (value, grads) = loss(&model, &params, &x_in, &y, &x_out);
    println!("loss = {value:.6}");

    let h = 1e-4;
    for (name, i) in [(CURATION_BIAS, 0), ("layer0.weight", 3), ("layer1.bias", 1)] {
        let mut plus = params.clone();
        plus.get_mut(name).unwrap().data_mut()[i] += h;
        let mut minus = params.clone();
        minus.get_mut(name).unwrap().data_mut()[i] -= h;
        let numeric = (loss(&model, &plus, &x_in, &y, &x_out).0 - loss(&model, &minus, &x_in, &y, &x_out).0) / (2.0 * h);
        let analytic = grads.get(name).unwrap().data()[i];
        println!("d/d {name}[{i}]: tape {analytic:+.8}  finite diff {numeric:+.8}");
    }
    Ok(())
}

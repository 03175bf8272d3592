use super::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Central-difference gradient of the scalar produced by `build` at `input`.
pub fn numeric_gradient<F>(build: F, input: &Tensor, step: f64) -> Result<Tensor>
where
    F: Fn(&mut Graph, NodeId) -> Result<NodeId>,
{
    let eval = |t: Tensor| -> Result<f64> {
        let mut g = Graph::new();
        let x = g.constant(t);
        let root = build(&mut g, x)?;
        g.value(root).item()
    };
    let mut grad = vec![0.0; input.numel()];
    for (i, slot) in grad.iter_mut().enumerate() {
        let mut plus = input.clone();
        plus.data_mut()[i] += step;
        let mut minus = input.clone();
        minus.data_mut()[i] -= step;
        *slot = (eval(plus)? - eval(minus)?) / (2.0 * step);
    }
    Tensor::new(input.shape().to_vec(), grad)
}

/// Largest `|analytic - numeric| / max(1, |analytic|)` over the coordinates
/// of `input`, comparing [`Graph::backward`] against central differences.
pub fn grad_check<F>(build: F, input: &Tensor, step: f64) -> Result<f64>
where
    F: Fn(&mut Graph, NodeId) -> Result<NodeId>,
{
    if !(1e-7..=1e-3).contains(&step) {
        return Err(Error::invalid(format!(
            "finite-difference step {step} outside [1e-7, 1e-3]"
        )));
    }
    let mut g = Graph::new();
    let x = g.variable(input.clone());
    let root = build(&mut g, x)?;
    g.backward(root)?;
    let analytic = g.grad(x);
    let numeric = numeric_gradient(&build, input, step)?;
    Ok(analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(a, n)| (a - n).abs() / a.abs().max(1.0))
        .fold(0.0, f64::max))
}

use super::{finite_diff_grad, max_relative_error, Graph, Tensor, Var};
use crate::error::Result;

/// Denominator floor used by [`check_gradients`] when forming relative errors.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-3;

/// Compares reverse-mode gradients of a scalar-valued graph against central
/// finite differences.
///
/// `build` receives a fresh graph with `inputs` registered as trainable leaves
/// (in order) and returns the scalar loss. Returns the largest relative error
/// over all input entries.
pub fn check_gradients<F>(build: F, inputs: &[Tensor], h: f64) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars = inputs
        .iter()
        .map(|t| g.param(t.clone()))
        .collect::<Result<Vec<_>>>()?;
    let loss = build(&mut g, &vars)?;
    let grads = g.backward(loss)?;

    let numeric = finite_diff_grad(
        |ps| {
            let mut g = Graph::new();
            let vars = ps.iter().map(|t| g.constant(t.clone())).collect::<Result<Vec<_>>>()?;
            let loss = build(&mut g, &vars)?;
            g.value(loss).item()
        },
        inputs,
        h,
    )?;

    Ok(vars
        .iter()
        .zip(&numeric)
        .map(|(&v, n)| {
            let a = grads.wrt(v);
            let n = n.clone().reshape(a.shape().to_vec()).expect("same length");
            max_relative_error(&a, &n, RELATIVE_ERROR_FLOOR)
        })
        .fold(0.0, f64::max))
}

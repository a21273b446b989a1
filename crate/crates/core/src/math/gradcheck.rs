//! Central finite-difference gradient checks against [`Graph::backward`].

use super::graph::{Graph, Var};
use super::matrix::Matrix;
use crate::error::{Error, Result};

/// Relative error floor used in the denominator.
pub const REL_FLOOR: f64 = 1e-8;

/// Maximum relative error between the analytic gradient of `f` and central
/// differences with step `eps`, over every coordinate of every input.
///
/// `f` receives a fresh graph and one leaf per entry of `inputs` and must
/// return a scalar node.
pub fn finite_difference_check<F>(f: F, inputs: &[Matrix], eps: f64) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    if eps <= 0.0 || !eps.is_finite() {
        return Err(Error::config(format!("finite-difference step {eps}")));
    }
    let eval = |values: &[Matrix]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = values.iter().map(|m| g.param(m.clone())).collect();
        let root = f(&mut g, &vars)?;
        let v = g.value(root).item();
        if !v.is_finite() {
            return Err(Error::numeric(format!("function value {v}")));
        }
        Ok(v)
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|m| g.param(m.clone())).collect();
    let root = f(&mut g, &vars)?;
    if !g.value(root).item().is_finite() {
        return Err(Error::numeric(format!(
            "function value {}",
            g.value(root).item()
        )));
    }
    g.backward(root)?;
    let analytic: Vec<Matrix> = vars
        .iter()
        .zip(inputs)
        .map(|(v, m)| {
            g.grad(*v)
                .cloned()
                .unwrap_or_else(|| Matrix::zeros(m.rows(), m.cols()))
        })
        .collect();

    let mut worst = 0.0f64;
    let mut probe = inputs.to_vec();
    for t in 0..inputs.len() {
        for j in 0..inputs[t].len() {
            let original = inputs[t].data()[j];
            probe[t].data_mut()[j] = original + eps;
            let up = eval(&probe)?;
            probe[t].data_mut()[j] = original - eps;
            let down = eval(&probe)?;
            probe[t].data_mut()[j] = original;
            let numeric = (up - down) / (2.0 * eps);
            let err = (analytic[t].data()[j] - numeric).abs() / numeric.abs().max(REL_FLOOR);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

/// Single-vector convenience form of [`finite_difference_check`].
pub fn finite_difference_check_vec<F>(f: F, x: &[f64], eps: f64) -> Result<f64>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    finite_difference_check(
        |g, vars| f(g, vars[0]),
        &[Matrix::row_vector(x.to_vec())],
        eps,
    )
}

//! Central finite-difference verification of tape gradients.

use super::{Graph, OpKind, Tensor, Var};
use crate::error::{Error, Result};

/// Max over every input component of
/// `|analytic − numeric| / max(1, |numeric|)`, where `numeric` is the central
/// difference `(f(x + h) − f(x − h)) / 2h`.
///
/// `f` builds a scalar on the given graph from leaves holding `inputs`.
pub fn grad_check<F>(f: F, inputs: &[Tensor], h: f64) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    grad_check_with_fault(f, inputs, h, None)
}

/// As [`grad_check`], with the analytic pass run on a graph whose backward
/// rule for `fault` has been corrupted.
#[doc(hidden)]
pub fn grad_check_with_fault<F>(f: F, inputs: &[Tensor], h: f64, fault: Option<OpKind>) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    if !(h > 0.0 && h <= 1e-2) {
        return Err(Error::Contract(format!("finite-difference step {h} not in (0, 1e-2]")));
    }
    let mut graph = Graph::new();
    if let Some(kind) = fault {
        graph.inject_fault(kind);
    }
    let vars = inputs
        .iter()
        .map(|t| graph.param(t.clone()))
        .collect::<Result<Vec<_>>>()?;
    let out = f(&mut graph, &vars)?;
    let analytic = graph.backward(out)?;

    let eval = |perturbed: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vs = perturbed
            .iter()
            .map(|t| g.constant(t.clone()))
            .collect::<Result<Vec<_>>>()?;
        let y = f(&mut g, &vs)?;
        let v = g.value(y).item()?;
        if !v.is_finite() {
            return Err(Error::Numeric("function evaluation is not finite".into()));
        }
        Ok(v)
    };

    let mut worst: f64 = 0.0;
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (i, var) in vars.iter().enumerate() {
        let grad = analytic.get(*var).expect("inputs are registered with requires_grad");
        for j in 0..inputs[i].len() {
            let orig = inputs[i].data()[j];
            work[i].data_mut()[j] = orig + h;
            let plus = eval(&work)?;
            work[i].data_mut()[j] = orig - h;
            let minus = eval(&work)?;
            work[i].data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let err = (grad.data()[j] - numeric).abs() / numeric.abs().max(1.0);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

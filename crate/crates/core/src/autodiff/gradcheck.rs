//! Finite-difference verification of reverse-mode gradients using the
//! five-point central stencil, truncation error O(h⁴).

use super::graph::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Max over checked entries of [`relative_error`].
    pub max_relative_error: f64,
    pub checked: usize,
    /// (input index, element index, analytic, numeric) at the worst entry.
    pub worst: Option<(usize, usize, f64, f64)>,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_relative_error <= tolerance
    }
}

/// Gradients below this magnitude are compared absolutely: a true zero
/// gradient carries finite-difference rounding noise of order 1e−10.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-5;

/// |a − n| / max(|a|, |n|, [`RELATIVE_ERROR_FLOOR`]).
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_ERROR_FLOOR)
}

fn evaluate<F>(f: &F, inputs: &[Tensor<f64>]) -> Result<(Graph<f64>, Vec<Var>, Var)>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    let value = g.value(out);
    if value.len() != 1 {
        return Err(Error::shape(format!(
            "gradient check needs a scalar function, got shape {:?}",
            value.shape()
        )));
    }
    if !value.item().is_finite() {
        return Err(Error::NonFinite(format!("function value {}", value.item())));
    }
    Ok((g, vars, out))
}

/// Checks `f` at `point` over every element.
pub fn grad_check<F>(f: F, point: &Tensor<f64>, perturbation: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, Var) -> Result<Var>,
{
    grad_check_multi(|g, v| f(g, v[0]), std::slice::from_ref(point), perturbation)
}

/// Checks `f` with respect to every element of every input.
pub fn grad_check_multi<F>(f: F, inputs: &[Tensor<f64>], perturbation: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let entries: Vec<(usize, usize)> = inputs
        .iter()
        .enumerate()
        .flat_map(|(i, t)| (0..t.len()).map(move |e| (i, e)))
        .collect();
    grad_check_entries(f, inputs, &entries, perturbation)
}

/// Checks only the listed `(input, element)` entries.
pub fn grad_check_entries<F>(
    f: F,
    inputs: &[Tensor<f64>],
    entries: &[(usize, usize)],
    perturbation: f64,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    if perturbation <= 0.0 || !perturbation.is_finite() {
        return Err(Error::invalid(format!("perturbation must be positive, got {perturbation}")));
    }
    let (graph, vars, out) = evaluate(&f, inputs)?;
    let grads = graph.backward(out)?;
    drop(graph);

    let mut report = GradCheckReport { max_relative_error: 0.0, checked: 0, worst: None };
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for &(i, e) in entries {
        let analytic = grads.get(vars[i]).map_or(0.0, |t| t.data()[e]);
        let orig = work[i].data()[e];
        let mut at = |offset: f64| -> Result<f64> {
            work[i].data_mut()[e] = orig + offset;
            let (g, _, o) = evaluate(&f, &work)?;
            Ok(g.value(o).item())
        };
        let (p1, m1) = (at(perturbation)?, at(-perturbation)?);
        let (p2, m2) = (at(2.0 * perturbation)?, at(-2.0 * perturbation)?);
        work[i].data_mut()[e] = orig;

        let numeric = (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * perturbation);
        let err = relative_error(analytic, numeric);
        if !err.is_finite() {
            return Err(Error::NonFinite(format!("entry ({i},{e}): analytic {analytic}, numeric {numeric}")));
        }
        report.checked += 1;
        if err > report.max_relative_error || report.worst.is_none() {
            report.max_relative_error = report.max_relative_error.max(err);
            if err >= report.max_relative_error {
                report.worst = Some((i, e, analytic, numeric));
            }
        }
    }
    Ok(report)
}

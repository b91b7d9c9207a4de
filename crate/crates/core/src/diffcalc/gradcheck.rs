use super::array::Array;
use super::graph::{DiffGraph, NodeId};
use super::GraphError;

/// Values above this magnitude make central differences unreliable.
const CONDITIONING_LIMIT: f64 = 1e8;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Largest `|analytic − numeric| / max(1, |analytic|, |numeric|)` seen.
    pub max_rel_error: f64,
    pub checked: usize,
    pub passed: bool,
    pub warnings: Vec<String>,
}

/// Compare the reverse-mode gradient of `sum(root)` with respect to every
/// named input against central differences of step `h`.
pub fn grad_check(
    graph: &DiffGraph<f64>,
    root: NodeId,
    inputs: &[(&str, &Array<f64>)],
    h: f64,
    tol: f64,
) -> Result<GradCheckReport, GraphError> {
    if !(h > 0.0) {
        return Err(GraphError::BadStep(h));
    }
    let mut session = graph.session();
    let value = session.forward(root, inputs)?.clone();
    if !value.all_finite() {
        return Err(GraphError::NonFinite);
    }
    let mut warnings = Vec::new();
    if value.max_abs() > CONDITIONING_LIMIT {
        warnings.push(format!(
            "root magnitude {:.3e} exceeds {CONDITIONING_LIMIT:e}; finite differences are poorly conditioned",
            value.max_abs()
        ));
    }
    let seed = Array::new(value.shape().to_vec(), vec![1.0; value.len()])?;
    let grads = session.backward(&seed)?;

    let objective = |bound: &[(&str, &Array<f64>)]| -> Result<f64, GraphError> {
        let v = graph.forward(root, bound)?;
        if !v.all_finite() {
            return Err(GraphError::NonFinite);
        }
        Ok(v.sum())
    };

    let mut max_rel_error = 0.0f64;
    let mut checked = 0;
    for (id, name) in graph.inputs() {
        let Some(pos) = inputs.iter().position(|(n, _)| *n == name) else {
            continue;
        };
        let Some(analytic) = grads.get(id) else { continue };
        let base = inputs[pos].1;
        if base.max_abs() > CONDITIONING_LIMIT {
            warnings.push(format!(
                "input `{name}` magnitude {:.3e} exceeds {CONDITIONING_LIMIT:e}",
                base.max_abs()
            ));
        }
        for idx in 0..base.len() {
            let mut plus = base.clone();
            plus.data_mut()[idx] += h;
            let mut minus = base.clone();
            minus.data_mut()[idx] -= h;
            let mut bound: Vec<(&str, &Array<f64>)> = inputs.to_vec();
            bound[pos].1 = &plus;
            let fp = objective(&bound)?;
            bound[pos].1 = &minus;
            let fm = objective(&bound)?;
            let numeric = (fp - fm) / (2.0 * h);
            let a = analytic.data()[idx];
            let rel = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
            max_rel_error = max_rel_error.max(rel);
            checked += 1;
        }
    }
    Ok(GradCheckReport {
        max_rel_error,
        checked,
        passed: max_rel_error <= tol,
        warnings,
    })
}

//! Central finite-difference check of [`Graph::backward`].

use super::graph::{Graph, NodeId};
use super::tensor::Tensor;
use crate::error::Result;

/// Relative-error denominators are clamped from below by this value so
/// that coordinates with vanishing gradients are compared absolutely.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-4;

/// Worst coordinate found by [`grad_check`].
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub max_abs_error: f64,
    pub coordinates: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(RELATIVE_ERROR_FLOOR);
    (analytic - numeric).abs() / denom
}

/// Compares analytic gradients against central differences with step `h`.
///
/// `build` receives a fresh graph and the parameter node ids (in the order
/// of `params`) and must return the scalar loss node.
pub fn grad_check<F>(build: F, params: &[Tensor], h: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[NodeId]) -> Result<NodeId>,
{
    let eval = |ps: &[Tensor]| -> Result<(Graph, Vec<NodeId>, NodeId)> {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = ps.iter().map(|p| g.param(p.clone())).collect();
        let loss = build(&mut g, &ids)?;
        Ok((g, ids, loss))
    };

    let (graph, ids, loss) = eval(params)?;
    let grads = graph.backward(loss)?;

    let mut report = GradCheckReport::default();
    let mut work = params.to_vec();
    for (t, id) in ids.iter().enumerate() {
        let analytic = grads.get(*id).expect("gradient for every param");
        for j in 0..work[t].len() {
            let orig = work[t].data()[j];
            work[t].data_mut()[j] = orig + h;
            let (g, _, l) = eval(&work)?;
            let plus = g.value(l).item();
            work[t].data_mut()[j] = orig - h;
            let (g, _, l) = eval(&work)?;
            let minus = g.value(l).item();
            work[t].data_mut()[j] = orig;

            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic.data()[j];
            report.max_relative_error = report.max_relative_error.max(relative_error(a, numeric));
            report.max_abs_error = report.max_abs_error.max((a - numeric).abs());
            report.coordinates += 1;
        }
    }
    Ok(report)
}

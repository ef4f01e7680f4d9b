//! Central finite-difference gradient checking.

use crate::error::Result;
use crate::numerics::graph::{backward, Graph, Var};
use crate::numerics::params::ParamStore;

/// Worst relative error between analytic and numeric gradients.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: String,
    pub checked: usize,
}

/// Relative error with a small absolute floor so exactly-zero gradients
/// compare sensibly.
pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Compares [`backward`] against `(f(θ+h) − f(θ−h)) / 2h` for every
/// trainable element of `store` (at most `max_per_param` evenly spaced
/// elements per tensor). `f` must build a scalar loss and be deterministic.
pub fn check_gradients<F>(store: &ParamStore<f64>, step: f64, max_per_param: usize, f: F) -> Result<GradCheckReport>
where
    F: for<'g> Fn(&'g Graph<f64>, &ParamStore<f64>) -> Result<Var<'g, f64>>,
{
    let graph = Graph::new();
    let loss = f(&graph, store)?;
    let analytic = backward(loss, store)?;
    drop(graph);

    let eval = |s: &ParamStore<f64>| -> Result<f64> {
        let g = Graph::new();
        let l = f(&g, s)?;
        let v = l.value().item().expect("scalar loss");
        Ok(v)
    };

    let mut report = GradCheckReport { max_rel_error: 0.0, worst_param: String::new(), checked: 0 };
    let mut probe = store.clone();
    for (name, t) in store.iter() {
        if !t.requires_grad() {
            continue;
        }
        let n = t.numel();
        let stride = n.div_ceil(max_per_param.max(1)).max(1);
        for i in (0..n).step_by(stride) {
            let orig = t.data()[i];
            probe.get_mut(name).unwrap().data_mut()[i] = orig + step;
            let plus = eval(&probe)?;
            probe.get_mut(name).unwrap().data_mut()[i] = orig - step;
            let minus = eval(&probe)?;
            probe.get_mut(name).unwrap().data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            let err = rel_error(analytic[name].data()[i], numeric);
            report.checked += 1;
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst_param = format!("{name}[{i}]");
            }
        }
    }
    Ok(report)
}

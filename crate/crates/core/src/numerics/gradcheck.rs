//! Central-difference gradient estimation, used as the oracle for the tape.

use serde::Serialize;

use crate::error::Result;
use crate::exec::Execution;

use super::{Gradients, ParamSet};
#[cfg(test)]
use super::Tensor;

pub const DEFAULT_EPSILON: f64 = 1e-5;
pub const REL_TOLERANCE: f64 = 1e-4;
pub const ABS_TOLERANCE: f64 = 1e-6;

/// `(f(θ+ε) − f(θ−ε)) / 2ε` for every coordinate of every parameter.
pub fn finite_difference_gradient<F>(
    loss_fn: F,
    params: &ParamSet,
    epsilon: f64,
    exec: Execution,
) -> Result<Gradients>
where
    F: Fn(&ParamSet) -> Result<f64> + Sync + Send,
{
    let coords: Vec<usize> = (0..params.num_scalars()).collect();
    finite_difference_at(loss_fn, params, &coords, epsilon, exec).map(|partials| {
        let mut grads = Gradients::zeros_like(params);
        for (&c, v) in coords.iter().zip(partials) {
            let (id, off) = params.locate(c);
            grads.0[id.index()].data_mut()[off] = v;
        }
        grads
    })
}

/// Central differences at selected flat coordinates, in the given order.
pub fn finite_difference_at<F>(
    loss_fn: F,
    params: &ParamSet,
    coordinates: &[usize],
    epsilon: f64,
    exec: Execution,
) -> Result<Vec<f64>>
where
    F: Fn(&ParamSet) -> Result<f64> + Sync + Send,
{
    let results = exec.map_range_init(
        coordinates.len(),
        || params.clone(),
        |scratch, i| {
            let (id, off) = params.locate(coordinates[i]);
            let original = params.get(id).data()[off];
            scratch.get_mut(id).data_mut()[off] = original + epsilon;
            let plus = loss_fn(scratch);
            scratch.get_mut(id).data_mut()[off] = original - epsilon;
            let minus = loss_fn(scratch);
            scratch.get_mut(id).data_mut()[off] = original;
            Ok((plus? - minus?) / (2.0 * epsilon))
        },
    );
    results.into_iter().collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub coordinates: usize,
    pub failures: usize,
    /// Largest `|a − n| / max(|a|, |n|)` over coordinates whose absolute
    /// error exceeds [`ABS_TOLERANCE`]; 0 when there are none.
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub worst: Option<String>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

/// True when `analytic` and `numeric` agree within max(rel·scale, abs).
pub fn within_tolerance(analytic: f64, numeric: f64, rel: f64, abs: f64) -> bool {
    let err = (analytic - numeric).abs();
    err <= abs || err <= rel * analytic.abs().max(numeric.abs())
}

pub fn compare(
    params: &ParamSet,
    analytic: &[(usize, f64)],
    numeric: &[f64],
) -> GradCheckReport {
    let mut report = GradCheckReport {
        coordinates: analytic.len(),
        failures: 0,
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        worst: None,
    };
    for (&(coord, a), &n) in analytic.iter().zip(numeric) {
        let err = (a - n).abs();
        report.max_abs_error = report.max_abs_error.max(err);
        if err > ABS_TOLERANCE {
            let rel = err / a.abs().max(n.abs());
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                let (id, off) = params.locate(coord);
                report.worst = Some(format!("{}[{off}]: analytic {a:e}, numeric {n:e}", params.name(id)));
            }
        }
        if !within_tolerance(a, n, REL_TOLERANCE, ABS_TOLERANCE) {
            report.failures += 1;
        }
    }
    report
}

/// Flat analytic gradient values at the given coordinates.
pub fn pick(grads: &Gradients, params: &ParamSet, coordinates: &[usize]) -> Vec<(usize, f64)> {
    coordinates
        .iter()
        .map(|&c| {
            let (id, off) = params.locate(c);
            (c, grads.get(id).data()[off])
        })
        .collect()
}

/// Checks the full analytic gradient of `loss_fn` (as built on a tape by
/// `analytic`) against central differences.
pub fn check_all<F, A>(loss_fn: F, analytic: A, params: &ParamSet, exec: Execution) -> Result<GradCheckReport>
where
    F: Fn(&ParamSet) -> Result<f64> + Sync + Send,
    A: FnOnce(&ParamSet) -> Result<Gradients>,
{
    let grads = analytic(params)?;
    let coords: Vec<usize> = (0..params.num_scalars()).collect();
    let numeric = finite_difference_at(loss_fn, params, &coords, DEFAULT_EPSILON, exec)?;
    Ok(compare(params, &pick(&grads, params, &coords), &numeric))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_at_three() {
        let mut p = ParamSet::new();
        p.insert("x", Tensor::scalar(3.0), 1);
        let g = finite_difference_gradient(
            |p| Ok(p.tensors()[0].data()[0].powi(2)),
            &p,
            DEFAULT_EPSILON,
            Execution::Sequential,
        )
        .unwrap();
        assert!((g.0[0].data()[0] - 6.0).abs() < 1e-8);
    }

    #[test]
    fn constant_loss_has_zero_gradient() {
        let mut p = ParamSet::new();
        p.insert("w", Tensor::matrix(2, 2, vec![1.0, -2.0, 0.5, 3.0]).unwrap(), 2);
        let g = finite_difference_gradient(|_| Ok(4.2), &p, DEFAULT_EPSILON, Execution::Parallel).unwrap();
        assert!(g.flat().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn tolerance_rule() {
        assert!(within_tolerance(1.0, 1.00005, REL_TOLERANCE, ABS_TOLERANCE));
        assert!(!within_tolerance(1.0, 1.001, REL_TOLERANCE, ABS_TOLERANCE));
        assert!(within_tolerance(1e-9, 5e-7, REL_TOLERANCE, ABS_TOLERANCE));
    }
}

//! Central-difference gradient checking.

use crate::error::{Error, Result};

use super::graph::{Graph, NodeId};
use super::tensor::Tensor;

pub const DEFAULT_STEP: f64 = 1e-4;

/// Relative error used throughout: `|analytic − numeric| / (|numeric| + 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (numeric.abs() + 1e-8)
}

/// Checks the tape gradient of a scalar function built by `f` against
/// central differences at every coordinate of `x`.
pub fn grad_check<F>(f: F, x: &Tensor, h: f64) -> Result<f64>
where
    F: Fn(&mut Graph, NodeId) -> Result<NodeId>,
{
    let coords: Vec<usize> = (0..x.len()).collect();
    grad_check_coords(f, x, h, &coords)
}

pub fn grad_check_coords<F>(f: F, x: &Tensor, h: f64, coords: &[usize]) -> Result<f64>
where
    F: Fn(&mut Graph, NodeId) -> Result<NodeId>,
{
    let eval = |t: &Tensor, want_grad: bool| -> Result<(f64, Option<Vec<f64>>)> {
        let mut g = Graph::new();
        let leaf = g.leaf(t.clone(), want_grad);
        let out = f(&mut g, leaf)?;
        let value = g.value(out).item();
        if !want_grad {
            return Ok((value, None));
        }
        g.backward(out)?;
        let grad = g
            .grad(leaf)
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; t.len()]);
        Ok((value, Some(grad)))
    };
    grad_check_with(eval, x, h, coords)
}

/// Generic checker over any `(value, gradient)` oracle; used when the
/// perturbed quantity is a model parameter rather than a graph input.
pub fn grad_check_with<E>(mut eval: E, x: &Tensor, h: f64, coords: &[usize]) -> Result<f64>
where
    E: FnMut(&Tensor, bool) -> Result<(f64, Option<Vec<f64>>)>,
{
    let (f0, grad) = eval(x, true)?;
    if !f0.is_finite() {
        return Err(Error::NonFinite {
            what: "grad_check objective".into(),
        });
    }
    let grad = grad.ok_or_else(|| Error::invalid("oracle returned no gradient"))?;
    let mut worst: f64 = 0.0;
    let mut probe = x.clone();
    for &c in coords {
        let orig = probe.data()[c];
        probe.data_mut()[c] = orig + h;
        let (fp, _) = eval(&probe, false)?;
        probe.data_mut()[c] = orig - h;
        let (fm, _) = eval(&probe, false)?;
        probe.data_mut()[c] = orig;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::NonFinite {
                what: format!("grad_check objective at coordinate {c}"),
            });
        }
        let numeric = (fp - fm) / (2.0 * h);
        worst = worst.max(relative_error(grad[c], numeric));
    }
    Ok(worst)
}

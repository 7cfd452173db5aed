//! Central finite-difference gradient oracle.
//!
//! Deliberately independent of `Tape::backward`: it only perturbs parameter
//! values and re-runs a caller-supplied forward closure. Used by unit and
//! acceptance tests to validate analytic gradients.

use crate::diffcore::{Matrix, ParamId, ParamStore};
use crate::error::Result;

/// Numerical gradient of `loss_fn` w.r.t. one parameter, step-symmetric.
pub fn finite_difference_grad<F>(
    store: &mut ParamStore,
    id: ParamId,
    step: f64,
    mut loss_fn: F,
) -> Result<Matrix>
where
    F: FnMut(&ParamStore) -> Result<f64>,
{
    let shape = (store.value(id).rows(), store.value(id).cols());
    let mut grad = Matrix::zeros(shape.0, shape.1);
    for i in 0..shape.0 {
        for j in 0..shape.1 {
            let original = store.value(id).get(i, j);
            store.value_mut(id).set(i, j, original + step);
            let plus = loss_fn(store)?;
            store.value_mut(id).set(i, j, original - step);
            let minus = loss_fn(store)?;
            store.value_mut(id).set(i, j, original);
            grad.set(i, j, (plus - minus) / (2.0 * step));
        }
    }
    Ok(grad)
}

/// Max elementwise relative error between analytic grads already present in
/// the store and the finite-difference oracle, across the given parameters.
pub fn max_relative_error<F>(
    store: &mut ParamStore,
    ids: &[ParamId],
    step: f64,
    mut loss_fn: F,
) -> Result<f64>
where
    F: FnMut(&ParamStore) -> Result<f64>,
{
    let mut worst: f64 = 0.0;
    for &id in ids {
        let analytic = store.grad(id).clone();
        let numeric = finite_difference_grad(store, id, step, &mut loss_fn)?;
        for (a, n) in analytic.values().iter().zip(numeric.values()) {
            let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-6);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}

//! Central finite-difference gradient checking.
//!
//! The probes here recompute the loss from scratch for every perturbed
//! entry, so they are independent of the reverse-mode path they audit.

use crate::error::Result;
use crate::nn::layers::Parameter;
use crate::nn::tensor::Tensor;
use ndarray::Array2;

/// Central finite differences of `loss_fn` with respect to every entry of
/// `target`, perturbing the values in place and restoring them afterwards.
pub fn finite_difference_grad(
    target: &Tensor,
    mut loss_fn: impl FnMut() -> f64,
    step: f64,
) -> Array2<f64> {
    let shape = target.shape();
    let mut grad = Array2::zeros(shape);
    for r in 0..shape.0 {
        for c in 0..shape.1 {
            let original = target.values()[[r, c]];
            target.values_mut()[[r, c]] = original + step;
            let up = loss_fn();
            target.values_mut()[[r, c]] = original - step;
            let down = loss_fn();
            target.values_mut()[[r, c]] = original;
            grad[[r, c]] = (up - down) / (2.0 * step);
        }
    }
    grad
}

/// Worst relative discrepancy between two gradients, with a floor on the
/// denominator so near-zero entries compare absolutely.
pub fn max_rel_error(analytic: &Array2<f64>, numeric: &Array2<f64>) -> f64 {
    analytic
        .iter()
        .zip(numeric.iter())
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-6))
        .fold(0.0, f64::max)
}

/// Audits every parameter of a forward pass against central differences.
///
/// `build_loss` must rebuild the full forward pass from the parameters'
/// current values (reseeding any stochastic layers identically). Returns
/// the worst relative error across all parameters.
pub fn check_gradients(
    params: &[Parameter],
    mut build_loss: impl FnMut() -> Result<Tensor>,
    step: f64,
) -> Result<f64> {
    for p in params {
        p.tensor.clear_grad();
    }
    let loss = build_loss()?;
    loss.backward()?;
    let mut worst: f64 = 0.0;
    for p in params {
        let analytic = p.tensor.grad().unwrap_or_else(|| {
            panic!("parameter {:?} received no gradient", p.name)
        });
        let numeric = finite_difference_grad(
            &p.tensor,
            || build_loss().expect("forward failed during probe").scalar(),
            step,
        );
        worst = worst.max(max_rel_error(&analytic, &numeric));
    }
    Ok(worst)
}

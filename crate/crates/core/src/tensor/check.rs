//! Central finite-difference gradient oracle.
//!
//! Used by the test suites to validate every analytic gradient in the crate.
//! The oracle only ever calls the forward path, so it stays independent of
//! the backward implementation it checks.

use crate::scalar::Scalar;
use ndarray::Array2;

/// Central finite differences of `loss_fn` with respect to every entry of
/// `param`. `param` is restored to its original values before returning.
pub fn finite_diff_grad<S: Scalar>(
    param: &mut Array2<S>,
    step: S,
    mut loss_fn: impl FnMut(&Array2<S>) -> S,
) -> Array2<S> {
    let dim = param.dim();
    let mut grad = Array2::zeros(dim);
    for i in 0..dim.0 {
        for j in 0..dim.1 {
            let orig = param[(i, j)];
            param[(i, j)] = orig + step;
            let up = loss_fn(param);
            param[(i, j)] = orig - step;
            let down = loss_fn(param);
            param[(i, j)] = orig;
            grad[(i, j)] = (up - down) / (step + step);
        }
    }
    grad
}

/// Worst relative error between two gradients:
/// `max |a-b| / max(|a|, |b|, floor)`.
pub fn max_rel_err<S: Scalar>(a: &Array2<S>, b: &Array2<S>, floor: S) -> f64 {
    assert_eq!(a.dim(), b.dim(), "gradient shapes differ");
    let mut worst = 0.0f64;
    for (&x, &y) in a.iter().zip(b.iter()) {
        let denom = x.abs().max(y.abs()).max(floor);
        let rel = ((x - y).abs() / denom).to_f64();
        if rel > worst {
            worst = rel;
        }
    }
    worst
}

//! Central finite-difference gradient checking.
//!
//! The checker rebuilds the graph twice per coordinate with the input
//! perturbed by +/-eps, so it is independent of the backward pass it
//! verifies. Checks run in f64 regardless of the training precision.

use crate::tensor::tensor::Tensor;

/// Outcome of a single gradient comparison.
#[derive(Debug)]
pub struct GradCheckFailure {
    pub coord: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

/// Relative error with an absolute floor so near-zero pairs compare sanely.
pub fn rel_error(a: f64, n: f64) -> f64 {
    let denom = a.abs().max(n.abs()).max(1e-6);
    (a - n).abs() / denom
}

/// Central finite difference of `f` at `x`, one coordinate at a time.
pub fn finite_difference(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], eps: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len());
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + eps;
        let hi = f(&probe);
        probe[i] = orig - eps;
        let lo = f(&probe);
        probe[i] = orig;
        out.push((hi - lo) / (2.0 * eps));
    }
    out
}

/// Compares analytic gradients against central differences on the selected
/// coordinates (all of them when `coords` is None). `f` must evaluate the
/// same scalar the analytic gradient was taken from.
pub fn compare_gradient(
    f: &mut dyn FnMut(&[f64]) -> f64,
    x: &[f64],
    analytic: &Tensor<f64>,
    coords: Option<&[usize]>,
    eps: f64,
    tol: f64,
) -> Result<(), GradCheckFailure> {
    assert_eq!(x.len(), analytic.len(), "gradient length mismatch");
    let all: Vec<usize>;
    let coords = match coords {
        Some(c) => c,
        None => {
            all = (0..x.len()).collect();
            &all
        }
    };
    let mut probe = x.to_vec();
    for &i in coords {
        let orig = probe[i];
        probe[i] = orig + eps;
        let hi = f(&probe);
        probe[i] = orig - eps;
        let lo = f(&probe);
        probe[i] = orig;
        let numeric = (hi - lo) / (2.0 * eps);
        let a = analytic.data()[i];
        let e = rel_error(a, numeric);
        if e > tol {
            return Err(GradCheckFailure { coord: i, analytic: a, numeric, rel_error: e });
        }
    }
    Ok(())
}

//! Thin checked wrappers over LAPACK.

use ndarray::{Array1, Array2};
use ndarray_linalg::Solve;

use crate::error::{Error, Result};

/// Solves `a x = b` and verifies the backward error, so that a misbehaving
/// BLAS build is reported instead of silently corrupting Newton iterations.
pub fn solve_checked(a: &Array2<f64>, b: Array1<f64>) -> Result<Array1<f64>> {
    let x = a.solve(&b)?;
    let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs())) * x.iter().fold(0.0f64, |m, v| m.max(v.abs()))
        + b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let resid = (a.dot(&x) - &b).iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if !(resid <= 1e-8 * scale.max(f64::MIN_POSITIVE)) {
        return Err(Error::Linalg(format!(
            "linear solve backward error {resid:e} (scale {scale:e}); if this persists, \
             set OPENBLAS_CORETYPE=Haswell to avoid broken BLAS kernels"
        )));
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_a_dense_system() {
        let n = 129;
        let a = Array2::from_shape_fn((n, n), |(i, j)| {
            ((i * 31 + j * 17) % 97) as f64 / 97.0 + if i == j { 3.0 } else { 0.0 }
        });
        let b = Array1::from_shape_fn(n, |i| (i as f64).sin());
        let x = solve_checked(&a, b.clone()).unwrap();
        let r = a.dot(&x) - &b;
        assert!(r.iter().all(|v| v.abs() < 1e-12));
    }
}

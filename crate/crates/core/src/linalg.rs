//! Small dense kernels for the Vecchia conditionals, where matrices are at
//! most `m × m` and allocation per call would dominate.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// In-place lower Cholesky of a row-major `n × n` SPD matrix. Only the lower
/// triangle is read and written. Returns `false` on a nonpositive pivot.
pub(crate) fn cholesky_in_place(a: &mut [f64], n: usize) -> bool {
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= a[j * n + k] * a[j * n + k];
        }
        if !(d > 0.0) || !d.is_finite() {
            return false;
        }
        let d = d.sqrt();
        a[j * n + j] = d;
        for i in (j + 1)..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = s / d;
        }
    }
    true
}

/// Solves `L x = b` in place for a row-major lower-triangular `L`.
pub(crate) fn forward_solve(l: &[f64], n: usize, b: &mut [f64]) {
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * n + k] * b[k];
        }
        b[i] = s / l[i * n + i];
    }
}

/// Pairwise summation; deterministic for a fixed input order.
pub(crate) fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 16 {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// `log N(y; 0, C)` through a dense Cholesky of `C`.
pub(crate) fn gaussian_logpdf_dense(cov: DMatrix<f64>, y: &[f64]) -> Result<f64> {
    let n = y.len();
    let chol = cov.cholesky().ok_or_else(|| Error::NumericalSingularity {
        index: 0,
        detail: "covariance matrix is not positive definite".into(),
    })?;
    let l = chol.l();
    let mut z = nalgebra::DVector::from_column_slice(y);
    if !l.solve_lower_triangular_mut(&mut z) {
        return Err(Error::NumericalSingularity {
            index: 0,
            detail: "singular Cholesky factor".into(),
        });
    }
    let logdet: f64 = (0..n).map(|i| l[(i, i)].ln()).sum::<f64>() * 2.0;
    Ok(-0.5 * (n as f64 * (2.0 * std::f64::consts::PI).ln() + logdet + z.norm_squared()))
}

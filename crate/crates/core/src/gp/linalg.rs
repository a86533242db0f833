use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

pub const JITTER_START: f64 = 1e-10;
pub const JITTER_MAX: f64 = 1e-4;

/// Cholesky factorization that adds escalating diagonal jitter when the
/// plain factorization fails.
///
/// The jitter starts at zero, then tries `1e-10 * mean(diag)` and grows by a
/// factor of ten up to `1e-4 * mean(diag)`. Returns the factor of
/// `a + jitter * I` and the jitter that was used.
pub fn robust_cholesky(a: &DMatrix<f64>) -> Result<(Cholesky<f64, Dyn>, f64)> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: a.ncols(),
        });
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(
            "matrix has non-finite entries".into(),
        ));
    }
    if let Some(c) = Cholesky::new(a.clone()) {
        return Ok((c, 0.0));
    }
    let mean_diag = if n == 0 { 1.0 } else { a.diagonal().mean() };
    let scale = if mean_diag > 0.0 { mean_diag } else { 1.0 };
    let mut rel = JITTER_START;
    while rel <= JITTER_MAX * (1.0 + 1e-9) {
        let jitter = rel * scale;
        let mut shifted = a.clone();
        for i in 0..n {
            shifted[(i, i)] += jitter;
        }
        if let Some(c) = Cholesky::new(shifted) {
            return Ok((c, jitter));
        }
        rel *= 10.0;
    }
    Err(Error::NotPositiveDefinite {
        max_jitter: JITTER_MAX * scale,
    })
}

/// log-determinant of the factored matrix.
pub fn chol_log_det(chol: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * chol
        .l_dirty()
        .diagonal()
        .iter()
        .map(|v| v.ln())
        .sum::<f64>()
}

/// Solve `L v = b` for the lower factor.
pub fn solve_lower(chol: &Cholesky<f64, Dyn>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let l = chol.l_dirty();
    let mut out = b.clone();
    l.solve_lower_triangular_mut(&mut out);
    out
}

pub fn solve_vec(chol: &Cholesky<f64, Dyn>, b: &DVector<f64>) -> DVector<f64> {
    chol.solve(b)
}

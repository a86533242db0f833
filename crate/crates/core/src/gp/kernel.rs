//! ARD squared-exponential covariance.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Squared-exponential kernel hyperparameters, stored as logarithms so that
/// every value is a valid (positive) variance or length scale.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelParams {
    /// log of the output variance.
    pub log_output_variance: f64,
    /// log of the per-dimension length scales.
    pub log_length_scales: Vec<f64>,
}

impl KernelParams {
    pub fn new(log_output_variance: f64, log_length_scales: Vec<f64>) -> Self {
        Self {
            log_output_variance,
            log_length_scales,
        }
    }

    pub fn dim(&self) -> usize {
        self.log_length_scales.len()
    }

    pub fn output_variance(&self) -> f64 {
        self.log_output_variance.exp()
    }

    pub fn length_scales(&self) -> Vec<f64> {
        self.log_length_scales.iter().map(|l| l.exp()).collect()
    }

    /// Number of free parameters: output variance plus one length scale per dimension.
    pub fn n_params(&self) -> usize {
        1 + self.dim()
    }

    /// Flattened log-parameters: `[log sigma0^2, log l_1, ..., log l_D]`.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.n_params());
        v.push(self.log_output_variance);
        v.extend_from_slice(&self.log_length_scales);
        v
    }

    pub fn from_slice(v: &[f64]) -> Self {
        Self::new(v[0], v[1..].to_vec())
    }

    pub fn is_finite(&self) -> bool {
        self.log_output_variance.is_finite() && self.log_length_scales.iter().all(|l| l.is_finite())
    }

    fn inverse_squared_scales(&self) -> Vec<f64> {
        self.log_length_scales
            .iter()
            .map(|l| (-2.0 * l).exp())
            .collect()
    }
}

/// `sigma0^2 * exp(-0.5 * sum_d (a_d - b_d)^2 / l_d^2)`.
pub fn se_kernel(a: &[f64], b: &[f64], params: &KernelParams) -> Result<f64> {
    if a.len() != params.dim() {
        return Err(Error::DimensionMismatch {
            expected: params.dim(),
            found: a.len(),
        });
    }
    if b.len() != params.dim() {
        return Err(Error::DimensionMismatch {
            expected: params.dim(),
            found: b.len(),
        });
    }
    let r2: f64 = a
        .iter()
        .zip(b)
        .zip(&params.log_length_scales)
        .map(|((x, y), l)| (x - y) * (x - y) * (-2.0 * l).exp())
        .sum();
    Ok(params.output_variance() * (-0.5 * r2).exp())
}

/// Cross-covariance matrix between the rows of `xa` and `xb`.
pub fn kernel_matrix(
    xa: &DMatrix<f64>,
    xb: &DMatrix<f64>,
    params: &KernelParams,
) -> Result<DMatrix<f64>> {
    let d = params.dim();
    if xa.ncols() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: xa.ncols(),
        });
    }
    if xb.ncols() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: xb.ncols(),
        });
    }
    let inv = params.inverse_squared_scales();
    let s2 = params.output_variance();
    let symmetric = std::ptr::eq(xa, xb);
    let mut k = DMatrix::zeros(xa.nrows(), xb.nrows());
    for i in 0..xa.nrows() {
        let start = if symmetric { i } else { 0 };
        for j in start..xb.nrows() {
            let mut r2 = 0.0;
            for (c, w) in inv.iter().enumerate() {
                let diff = xa[(i, c)] - xb[(j, c)];
                r2 += diff * diff * w;
            }
            let v = s2 * (-0.5 * r2).exp();
            k[(i, j)] = v;
            if symmetric {
                k[(j, i)] = v;
            }
        }
    }
    Ok(k)
}

/// Gradient of a scalar objective with respect to the kernel's log-parameters,
/// given `adjoint[i, j] = dObjective / dK[i, j]` for the training covariance
/// `k = K(x, x)`. Returned in the order of [`KernelParams::to_vec`].
pub fn kernel_param_gradient(
    x: &DMatrix<f64>,
    k: &DMatrix<f64>,
    adjoint: &DMatrix<f64>,
    params: &KernelParams,
) -> Vec<f64> {
    let n = x.nrows();
    let inv = params.inverse_squared_scales();
    let mut grad = vec![0.0; params.n_params()];
    for j in 0..n {
        for i in 0..n {
            let w = adjoint[(i, j)] * k[(i, j)];
            if w == 0.0 {
                continue;
            }
            grad[0] += w;
            for (c, s) in inv.iter().enumerate() {
                let diff = x[(i, c)] - x[(j, c)];
                grad[c + 1] += w * diff * diff * s;
            }
        }
    }
    grad
}

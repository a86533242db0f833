//! Variational heteroscedastic GP regression. The log noise variance `g(x)`
//! has its own GP prior with constant mean `mu0`; the posterior over `g` is
//! restricted to `N(mu, Sigma)` with
//! `mu = K_g (Lambda - I/2) 1 + mu0 1` and `Sigma^{-1} = K_g^{-1} + Lambda`,
//! so only the diagonal `Lambda` is free.

use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::kernel::{kernel_matrix, kernel_param_gradient, KernelParams};
use super::linalg::{chol_log_det, robust_cholesky, solve_lower};
use super::sgpr::{check_data, train_sgpr};
use super::train::{best_of_restarts, restart_points, TrainOptions};
use super::{PredictiveMoments, Regressor};
use crate::error::{Error, Result};

pub(crate) fn softplus(r: f64) -> f64 {
    r.max(0.0) + (-r.abs()).exp().ln_1p()
}

fn softplus_inv(l: f64) -> f64 {
    if l > 30.0 {
        l + (-(-l).exp()).ln_1p()
    } else {
        l.exp_m1().ln()
    }
}

/// Free parameters of the bound.
#[derive(Debug, Clone, PartialEq)]
pub struct VhgprParams {
    pub kernel_f: KernelParams,
    pub kernel_g: KernelParams,
    pub mu0: f64,
    /// Diagonal of the variational matrix, one entry per training point.
    pub variational_lambda: Vec<f64>,
}

impl VhgprParams {
    /// `[kernel_f logs, kernel_g logs, mu0, rho]` with `lambda = softplus(rho)`.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.kernel_f.to_vec();
        v.extend(self.kernel_g.to_vec());
        v.push(self.mu0);
        v.extend(self.variational_lambda.iter().map(|l| softplus_inv(*l)));
        v
    }

    pub fn from_slice(theta: &[f64], dim: usize) -> Self {
        let p = dim + 1;
        Self {
            kernel_f: KernelParams::from_slice(&theta[..p]),
            kernel_g: KernelParams::from_slice(&theta[p..2 * p]),
            mu0: theta[2 * p],
            variational_lambda: theta[2 * p + 1..].iter().map(|r| softplus(*r)).collect(),
        }
    }

    fn is_valid(&self) -> bool {
        self.kernel_f.is_finite()
            && self.kernel_g.is_finite()
            && self.mu0.is_finite()
            && self
                .variational_lambda
                .iter()
                .all(|l| l.is_finite() && *l >= 0.0)
    }
}

/// `KL(N(mu_q, sigma_q) || N(mu_p, sigma_p))` by direct dense evaluation.
pub fn gaussian_kl(
    mu_q: &DVector<f64>,
    sigma_q: &DMatrix<f64>,
    mu_p: &DVector<f64>,
    sigma_p: &DMatrix<f64>,
) -> Result<f64> {
    let n = mu_q.len();
    if mu_p.len() != n || sigma_q.shape() != (n, n) || sigma_p.shape() != (n, n) {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: mu_p.len(),
        });
    }
    let (cq, _) = robust_cholesky(sigma_q)?;
    let (cp, _) = robust_cholesky(sigma_p)?;
    let diff = mu_p - mu_q;
    let trace = cp.solve(sigma_q).trace();
    let maha = diff.dot(&cp.solve(&diff));
    Ok(0.5 * (trace + maha - n as f64 + chol_log_det(&cp) - chol_log_det(&cq)))
}

/// Quantities shared by the bound, its gradient and the model caches.
struct Posterior {
    kf: DMatrix<f64>,
    kg: DMatrix<f64>,
    lambda: DVector<f64>,
    /// `lambda - 1/2`.
    shifted: DVector<f64>,
    /// Factor of `B = I + Lambda^{1/2} K_g Lambda^{1/2}`.
    chol_b: Cholesky<f64, Dyn>,
    mu: DVector<f64>,
    sigma_diag: DVector<f64>,
    r: DVector<f64>,
    chol_a: Cholesky<f64, Dyn>,
    jitter: f64,
    alpha: DVector<f64>,
}

fn posterior(params: &VhgprParams, x: &DMatrix<f64>, y: &DVector<f64>) -> Result<Posterior> {
    let n = x.nrows();
    if params.variational_lambda.len() != n {
        return Err(Error::LengthMismatch(format!(
            "{} variational parameters for {n} training points",
            params.variational_lambda.len()
        )));
    }
    if params.kernel_g.dim() != params.kernel_f.dim() {
        return Err(Error::DimensionMismatch {
            expected: params.kernel_f.dim(),
            found: params.kernel_g.dim(),
        });
    }
    if !params.is_valid() {
        return Err(Error::InvalidArgument(
            "parameters must be finite with nonnegative variational entries".into(),
        ));
    }
    let kf = kernel_matrix(x, x, &params.kernel_f)?;
    let kg = kernel_matrix(x, x, &params.kernel_g)?;
    let lambda = DVector::from_column_slice(&params.variational_lambda);
    let s = lambda.map(f64::sqrt);
    let mut b = DMatrix::from_fn(n, n, |i, j| s[i] * kg[(i, j)] * s[j]);
    for i in 0..n {
        b[(i, i)] += 1.0;
    }
    let (chol_b, _) = robust_cholesky(&b)?;
    let shifted = lambda.add_scalar(-0.5);
    let mu = (&kg * &shifted).add_scalar(params.mu0);
    // Sigma = K_g - V^T V with V = L_B^{-1} S K_g
    let skg = DMatrix::from_fn(n, n, |i, j| s[i] * kg[(i, j)]);
    let v = solve_lower(&chol_b, &skg);
    let sigma_diag = DVector::from_fn(n, |i, _| kg[(i, i)] - v.column(i).norm_squared());
    let r = DVector::from_fn(n, |i, _| (mu[i] - 0.5 * sigma_diag[i]).exp());
    if r.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(Error::InvalidArgument(
            "noise variances left the representable range".into(),
        ));
    }
    let mut a = kf.clone();
    for i in 0..n {
        a[(i, i)] += r[i];
    }
    let (chol_a, jitter) = robust_cholesky(&a)?;
    let alpha = chol_a.solve(y);
    Ok(Posterior {
        kf,
        kg,
        lambda,
        shifted,
        chol_b,
        mu,
        sigma_diag,
        r,
        chol_a,
        jitter,
        alpha,
    })
}

/// Negative marginal variational bound `-M` and its gradient in the order of
/// [`VhgprParams::to_vec`].
///
/// `M = log N(y | 0, K_f + R) - tr(Sigma)/4 - KL(N(mu, Sigma) || N(mu0 1, K_g))`
/// with `R_ii = exp(mu_i - Sigma_ii / 2)`.
pub fn mv_bound(
    params: &VhgprParams,
    x: &DMatrix<f64>,
    y: &DVector<f64>,
) -> Result<(f64, Vec<f64>)> {
    check_data(x, y, params.kernel_f.dim())?;
    if x.nrows() < 2 {
        return Err(Error::InvalidArgument(
            "the bound needs at least two points".into(),
        ));
    }
    let n = x.nrows();
    let p = posterior(params, x, y)?;
    let nf = n as f64;

    let log_lik =
        -0.5 * y.dot(&p.alpha) - 0.5 * chol_log_det(&p.chol_a) - 0.5 * nf * (2.0 * PI).ln();
    let b_inv = p.chol_b.inverse();
    let kl =
        0.5 * (b_inv.trace() + p.shifted.dot(&(&p.kg * &p.shifted)) - nf + chol_log_det(&p.chol_b));
    let bound = log_lik - 0.25 * p.sigma_diag.sum() - kl;

    // Adjoints of M.
    let s = p.lambda.map(f64::sqrt);
    // C = (I + K_g Lambda)^{-1} = I - K_g S B^{-1} S
    let sbs = DMatrix::from_fn(n, n, |i, j| s[i] * b_inv[(i, j)] * s[j]);
    let mut c = -(&p.kg * &sbs);
    for i in 0..n {
        c[(i, i)] += 1.0;
    }
    let sigma = &c * &p.kg;
    let mut w = p.chol_a.inverse();
    w.ger(1.0, &p.alpha, &p.alpha, -1.0);
    let beta = DVector::from_fn(n, |i, _| 0.5 * w[(i, i)] * p.r[i]);
    let gamma = beta.map(|b| -0.5 * b - 0.25);

    let adj_f = w * 0.5;
    let cc = &c * &c;
    let mut adj_g = DMatrix::from_fn(n, n, |i, j| {
        let lam = p.lambda[i];
        beta[i] * p.shifted[j] - 0.5 * lam * c[(i, j)] + 0.5 * lam * cc[(i, j)]
            - 0.5 * p.shifted[i] * p.shifted[j]
    });
    let gc = DMatrix::from_fn(n, n, |i, j| gamma[i] * c[(i, j)]);
    adj_g += c.transpose() * gc;

    let kg_beta = &p.kg * &beta;
    let kg_shift = &p.kg * &p.shifted;
    let c_sigma = &c * &sigma;
    let d_lambda = DVector::from_fn(n, |j, _| {
        let quad: f64 = (0..n)
            .map(|i| gamma[i] * sigma[(i, j)] * sigma[(i, j)])
            .sum();
        kg_beta[j] - quad - 0.5 * p.sigma_diag[j] + 0.5 * c_sigma[(j, j)] - kg_shift[j]
    });

    let mut grad = kernel_param_gradient(x, &p.kf, &adj_f, &params.kernel_f);
    grad.extend(kernel_param_gradient(x, &p.kg, &adj_g, &params.kernel_g));
    grad.push(beta.sum());
    // d lambda / d rho = sigmoid(rho) = 1 - exp(-lambda)
    grad.extend(
        d_lambda
            .iter()
            .zip(p.lambda.iter())
            .map(|(g, l)| g * -(-l).exp_m1()),
    );
    for g in grad.iter_mut() {
        *g = -*g;
    }
    Ok((-bound, grad))
}

/// A trained heteroscedastic GP with cached posterior quantities.
#[derive(Debug, Clone)]
pub struct VhgprModel {
    pub params: VhgprParams,
    /// Constant subtracted from the targets before fitting (0 unless centered).
    pub target_offset: f64,
    train_inputs: DMatrix<f64>,
    train_targets: DVector<f64>,
    shifted: DVector<f64>,
    sqrt_lambda: DVector<f64>,
    mu: DVector<f64>,
    sigma_diag: DVector<f64>,
    r: DVector<f64>,
    chol_a: Cholesky<f64, Dyn>,
    chol_b: Cholesky<f64, Dyn>,
    jitter: f64,
    alpha: DVector<f64>,
    pub warnings: Vec<String>,
}

impl VhgprModel {
    pub fn fit(
        params: VhgprParams,
        x: DMatrix<f64>,
        y: DVector<f64>,
        target_offset: f64,
    ) -> Result<Self> {
        check_data(&x, &y, params.kernel_f.dim())?;
        if !target_offset.is_finite() {
            return Err(Error::InvalidArgument(
                "target offset must be finite".into(),
            ));
        }
        let centered = y.add_scalar(-target_offset);
        let p = posterior(&params, &x, &centered)?;
        Ok(Self {
            params,
            target_offset,
            train_inputs: x,
            train_targets: y,
            sqrt_lambda: p.lambda.map(f64::sqrt),
            shifted: p.shifted,
            mu: p.mu,
            sigma_diag: p.sigma_diag,
            r: p.r,
            chol_a: p.chol_a,
            chol_b: p.chol_b,
            jitter: p.jitter,
            alpha: p.alpha,
            warnings: Vec::new(),
        })
    }

    /// Posterior mean of the log noise variance at the training inputs.
    pub fn noise_mean(&self) -> &DVector<f64> {
        &self.mu
    }

    /// Diagonal of the posterior covariance of the log noise variance.
    pub fn noise_covariance_diag(&self) -> &DVector<f64> {
        &self.sigma_diag
    }

    /// `R_ii = exp(mu_i - Sigma_ii / 2)`.
    pub fn r_diag(&self) -> &DVector<f64> {
        &self.r
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn variational_lambda(&self) -> &[f64] {
        &self.params.variational_lambda
    }

    /// Negative bound at the stored parameters.
    pub fn neg_bound(&self) -> Result<f64> {
        let y = self.train_targets.add_scalar(-self.target_offset);
        mv_bound(&self.params, &self.train_inputs, &y).map(|r| r.0)
    }

    /// Posterior moments `(mu_*, sigma_*^2)` of the log noise variance.
    pub fn log_noise_moments(&self, xq: &DMatrix<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
        let kg = &self.params.kernel_g;
        let ks = kernel_matrix(xq, &self.train_inputs, kg)?;
        let mean = (&ks * &self.shifted).add_scalar(self.params.mu0);
        let sk = DMatrix::from_fn(self.sqrt_lambda.len(), xq.nrows(), |i, j| {
            self.sqrt_lambda[i] * ks[(j, i)]
        });
        let v = solve_lower(&self.chol_b, &sk);
        let prior = kg.output_variance();
        let var = DVector::from_iterator(
            xq.nrows(),
            v.column_iter().map(|c| (prior - c.norm_squared()).max(0.0)),
        );
        Ok((mean, var))
    }

    /// Expected noise variance `exp(mu_* + sigma_*^2 / 2)`.
    pub fn noise_variance(&self, xq: &DMatrix<f64>) -> Result<DVector<f64>> {
        let (m, v) = self.log_noise_moments(xq)?;
        Ok(m.zip_map(&v, |m, v| (m + 0.5 * v).exp()))
    }
}

impl Regressor for VhgprModel {
    fn dim(&self) -> usize {
        self.params.kernel_f.dim()
    }

    fn train_inputs(&self) -> &DMatrix<f64> {
        &self.train_inputs
    }

    fn train_targets(&self) -> &DVector<f64> {
        &self.train_targets
    }

    fn predict(&self, xq: &DMatrix<f64>) -> Result<PredictiveMoments> {
        vhgpr_predict(self, xq)
    }
}

/// Predictive mean `a_*` and variance `c_*^2 + exp(mu_* + sigma_*^2 / 2)`.
pub fn vhgpr_predict(model: &VhgprModel, xq: &DMatrix<f64>) -> Result<PredictiveMoments> {
    let kf = &model.params.kernel_f;
    let ks = kernel_matrix(xq, &model.train_inputs, kf)?;
    let mean = &ks * &model.alpha;
    let v = solve_lower(&model.chol_a, &ks.transpose());
    let prior = kf.output_variance();
    let noise = model.noise_variance(xq)?;
    let variance = DVector::from_iterator(
        xq.nrows(),
        v.column_iter()
            .zip(noise.iter())
            .map(|(c, r)| (prior - c.norm_squared()).max(0.0) + r),
    );
    Ok(PredictiveMoments {
        mean: mean.add_scalar(model.target_offset),
        variance,
        query_inputs: xq.clone(),
    })
}

/// Starting point derived from a trained homoscedastic model.
pub fn initial_vhgpr_params(sgpr: &super::SgprModel, n: usize) -> VhgprParams {
    VhgprParams {
        kernel_f: sgpr.kernel.clone(),
        kernel_g: KernelParams::new(0.0, sgpr.kernel.log_length_scales.clone()),
        mu0: sgpr.log_noise_variance,
        variational_lambda: vec![0.5; n],
    }
}

/// Maximize the bound jointly over both kernels, `mu0` and the variational
/// diagonal, starting from a trained homoscedastic fit. Restarts perturb the
/// hyperparameters only.
pub fn train_vhgpr(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    options: &TrainOptions,
) -> Result<VhgprModel> {
    check_data(x, y, x.ncols())?;
    if x.nrows() < 2 {
        return Err(Error::InvalidArgument(
            "training needs at least two points".into(),
        ));
    }
    let sgpr = train_sgpr(x, y, options)?;
    let offset = sgpr.target_offset;
    let yc = y.add_scalar(-offset);
    let d = x.ncols();
    let init = initial_vhgpr_params(&sgpr, x.nrows());
    let base = init.to_vec();
    let starts = restart_points(&base, 2 * (d + 1) + 1, options);
    let objective = |theta: &[f64]| mv_bound(&VhgprParams::from_slice(theta, d), x, &yc).ok();
    let (_, best) = best_of_restarts(&starts, objective, &options.optimizer)?;
    let mut model = VhgprModel::fit(
        VhgprParams::from_slice(&best.x, d),
        x.clone(),
        y.clone(),
        offset,
    )?;
    model.warnings = sgpr.warnings;
    Ok(model)
}

//! Homoscedastic GP regression with a zero prior mean, trained by
//! minimizing the negative log marginal likelihood.

use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::kernel::{kernel_matrix, kernel_param_gradient, KernelParams};
use super::linalg::{chol_log_det, robust_cholesky, solve_lower};
use super::train::{
    best_of_restarts, log_ranges, mean, restart_points, target_scale, TrainOptions,
};
use super::{PredictiveMoments, Regressor};
use crate::error::{Error, Result};

pub(super) fn check_data(x: &DMatrix<f64>, y: &DVector<f64>, d: usize) -> Result<()> {
    if x.ncols() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: x.ncols(),
        });
    }
    if x.nrows() != y.len() {
        return Err(Error::LengthMismatch(format!(
            "{} input rows but {} targets",
            x.nrows(),
            y.len()
        )));
    }
    if x.nrows() == 0 {
        return Err(Error::InvalidArgument("no training data".into()));
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(
            "training data must be finite".into(),
        ));
    }
    Ok(())
}

/// Negative log marginal likelihood and its gradient with respect to
/// `[log sigma0^2, log l_1..l_D, log sigma_n^2]`.
pub fn sgpr_nlml(
    params: &KernelParams,
    log_noise_variance: f64,
    x: &DMatrix<f64>,
    y: &DVector<f64>,
) -> Result<(f64, Vec<f64>)> {
    check_data(x, y, params.dim())?;
    let n = x.nrows();
    let k = kernel_matrix(x, x, params)?;
    let noise = log_noise_variance.exp();
    let mut ky = k.clone();
    for i in 0..n {
        ky[(i, i)] += noise;
    }
    let (chol, _) = robust_cholesky(&ky)?;
    let alpha = chol.solve(y);
    let value = 0.5 * y.dot(&alpha) + 0.5 * chol_log_det(&chol) + 0.5 * n as f64 * (2.0 * PI).ln();

    // d(-log p)/dK_y = -0.5 (alpha alpha^T - K_y^{-1})
    let mut adjoint = chol.inverse();
    adjoint.ger(-1.0, &alpha, &alpha, 1.0);
    adjoint *= 0.5;
    let mut grad = kernel_param_gradient(x, &k, &adjoint, params);
    grad.push(noise * adjoint.trace());
    Ok((value, grad))
}

/// A trained homoscedastic GP with cached factorization.
#[derive(Debug, Clone)]
pub struct SgprModel {
    pub kernel: KernelParams,
    pub log_noise_variance: f64,
    /// Constant subtracted from the targets before fitting (0 unless centered).
    pub target_offset: f64,
    train_inputs: DMatrix<f64>,
    train_targets: DVector<f64>,
    chol: Cholesky<f64, Dyn>,
    jitter: f64,
    alpha: DVector<f64>,
    /// Non-fatal conditions met during training.
    pub warnings: Vec<String>,
}

impl SgprModel {
    /// Build the model caches for fixed hyperparameters.
    pub fn fit(
        kernel: KernelParams,
        log_noise_variance: f64,
        x: DMatrix<f64>,
        y: DVector<f64>,
        target_offset: f64,
    ) -> Result<Self> {
        check_data(&x, &y, kernel.dim())?;
        if !kernel.is_finite() || !log_noise_variance.is_finite() || !target_offset.is_finite() {
            return Err(Error::InvalidArgument(
                "hyperparameters must be finite".into(),
            ));
        }
        let mut ky = kernel_matrix(&x, &x, &kernel)?;
        let noise = log_noise_variance.exp();
        for i in 0..x.nrows() {
            ky[(i, i)] += noise;
        }
        let (chol, jitter) = robust_cholesky(&ky)?;
        let centered = y.add_scalar(-target_offset);
        let alpha = chol.solve(&centered);
        Ok(Self {
            kernel,
            log_noise_variance,
            target_offset,
            train_inputs: x,
            train_targets: y,
            chol,
            jitter,
            alpha,
            warnings: Vec::new(),
        })
    }

    pub fn noise_variance(&self) -> f64 {
        self.log_noise_variance.exp()
    }

    /// Lower Cholesky factor of `K + sigma_n^2 I + jitter I`.
    pub fn chol_factor(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn alpha(&self) -> &DVector<f64> {
        &self.alpha
    }

    /// Negative log marginal likelihood at the stored hyperparameters.
    pub fn nlml(&self) -> Result<f64> {
        let y = self.train_targets.add_scalar(-self.target_offset);
        sgpr_nlml(
            &self.kernel,
            self.log_noise_variance,
            &self.train_inputs,
            &y,
        )
        .map(|r| r.0)
    }
}

impl Regressor for SgprModel {
    fn dim(&self) -> usize {
        self.kernel.dim()
    }

    fn train_inputs(&self) -> &DMatrix<f64> {
        &self.train_inputs
    }

    fn train_targets(&self) -> &DVector<f64> {
        &self.train_targets
    }

    fn predict(&self, xq: &DMatrix<f64>) -> Result<PredictiveMoments> {
        sgpr_predict(self, xq)
    }
}

/// Predictive mean `k_*X alpha` and variance `k_** - k_*X K_y^{-1} k_X* + sigma_n^2`.
pub fn sgpr_predict(model: &SgprModel, xq: &DMatrix<f64>) -> Result<PredictiveMoments> {
    let ks = kernel_matrix(xq, &model.train_inputs, &model.kernel)?;
    let mean = &ks * &model.alpha;
    let v = solve_lower(&model.chol, &ks.transpose());
    let prior = model.kernel.output_variance();
    let noise = model.noise_variance();
    let variance = DVector::from_iterator(
        xq.nrows(),
        v.column_iter()
            .map(|c| (prior - c.norm_squared()).max(0.0) + noise),
    );
    Ok(PredictiveMoments {
        mean: mean.add_scalar(model.target_offset),
        variance,
        query_inputs: xq.clone(),
    })
}

/// Deterministic initialization: output variance from the target variance,
/// length scales from the input ranges, noise at a tenth of the variance.
pub fn initial_sgpr_params(x: &DMatrix<f64>, y: &DVector<f64>) -> (KernelParams, f64) {
    let (scale, _) = target_scale(y);
    (
        KernelParams::new(scale.ln(), log_ranges(x)),
        (0.1 * scale).ln(),
    )
}

/// Fit hyperparameters by type-II maximum likelihood over the deterministic
/// start and `n_restarts` perturbed starts, keeping the best.
pub fn train_sgpr(x: &DMatrix<f64>, y: &DVector<f64>, options: &TrainOptions) -> Result<SgprModel> {
    check_data(x, y, x.ncols())?;
    if x.nrows() < 2 {
        return Err(Error::InvalidArgument(
            "training needs at least two points".into(),
        ));
    }
    let offset = if options.center_targets { mean(y) } else { 0.0 };
    let yc = y.add_scalar(-offset);
    let mut warnings = Vec::new();
    let (_, constant) = target_scale(y);
    if constant {
        let msg = "training targets are constant".to_string();
        log::warn!("{msg}");
        warnings.push(msg);
    }
    let (kernel0, noise0) = initial_sgpr_params(x, &yc);
    let mut base = kernel0.to_vec();
    base.push(noise0);
    let starts = restart_points(&base, base.len(), options);
    let d = x.ncols();
    let objective = |theta: &[f64]| {
        let kp = KernelParams::from_slice(&theta[..d + 1]);
        sgpr_nlml(&kp, theta[d + 1], x, &yc).ok()
    };
    let (_, best) = best_of_restarts(&starts, objective, &options.optimizer)?;
    let kernel = KernelParams::from_slice(&best.x[..d + 1]);
    let mut model = SgprModel::fit(kernel, best.x[d + 1], x.clone(), y.clone(), offset)?;
    model.warnings = warnings;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn random_problem(
        rng: &mut ChaCha8Rng,
        n: usize,
        d: usize,
    ) -> (KernelParams, f64, DMatrix<f64>, DVector<f64>) {
        let kp = KernelParams::new(
            rng.random_range(-0.5..0.5),
            (0..d).map(|_| rng.random_range(-0.5..0.5)).collect(),
        );
        let x: DMatrix<f64> = DMatrix::from_fn(n, d, |_, _| rng.random_range(-2.0..2.0));
        let y = DVector::from_fn(n, |i, _| {
            f64::sin(x.row(i).sum()) + rng.random_range(-0.1..0.1)
        });
        (kp, rng.random_range(-3.0..-1.0), x, y)
    }

    #[test]
    fn single_zero_target_gives_half_log_two_pi_c() {
        let kp = KernelParams::new(0.5_f64.ln(), vec![0.0]);
        let x = DMatrix::from_element(1, 1, 0.3);
        let y = DVector::from_element(1, 0.0);
        let (v, _) = sgpr_nlml(&kp, 0.25_f64.ln(), &x, &y).unwrap();
        let c = 0.5 + 0.25;
        assert!((v - 0.5 * (2.0 * PI * c).ln()).abs() < 1e-14);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (kp, ln, x, y) = random_problem(&mut rng, 12, 2);
        let (_, g) = sgpr_nlml(&kp, ln, &x, &y).unwrap();
        let mut theta = kp.to_vec();
        theta.push(ln);
        let f = |t: &[f64]| {
            sgpr_nlml(&KernelParams::from_slice(&t[..3]), t[3], &x, &y)
                .unwrap()
                .0
        };
        for i in 0..theta.len() {
            let h = 1e-5;
            let mut p = theta.clone();
            let mut m = theta.clone();
            p[i] += h;
            m[i] -= h;
            let fd = (f(&p) - f(&m)) / (2.0 * h);
            let rel = (fd - g[i]).abs() / g[i].abs().max(1e-8);
            assert!(rel <= 1e-5, "component {i}: fd {fd} vs analytic {}", g[i]);
        }
    }

    #[test]
    fn predictions_match_dense_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let (kp, ln, x, y) = random_problem(&mut rng, 6, 2);
        let model = SgprModel::fit(kp.clone(), ln, x.clone(), y.clone(), 0.0).unwrap();
        assert_eq!(model.jitter(), 0.0);
        let xq = DMatrix::from_fn(4, 2, |_, _| rng.random_range(-2.0..2.0));
        let m = model.predict(&xq).unwrap();
        let mut ky = kernel_matrix(&x, &x, &kp).unwrap();
        ky += DMatrix::identity(6, 6) * ln.exp();
        let inv = ky.try_inverse().unwrap();
        let ks = kernel_matrix(&xq, &x, &kp).unwrap();
        let mean = &ks * &inv * &y;
        for i in 0..4 {
            let k = ks.row(i).transpose();
            let var = kp.output_variance() - (k.transpose() * &inv * &k)[(0, 0)] + ln.exp();
            assert!((m.mean[i] - mean[i]).abs() <= 1e-9 * mean[i].abs().max(1e-3));
            assert!((m.variance[i] - var).abs() <= 1e-9 * var);
        }
    }

    #[test]
    fn cached_factor_and_alpha_are_consistent() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let (kp, ln, x, y) = random_problem(&mut rng, 10, 3);
        let model = SgprModel::fit(kp.clone(), ln, x.clone(), y.clone(), 0.0).unwrap();
        let mut ky = kernel_matrix(&x, &x, &kp).unwrap();
        ky += DMatrix::identity(10, 10) * (ln.exp() + model.jitter());
        let l = model.chol_factor();
        assert!((&l * l.transpose() - &ky).norm() / ky.norm() <= 1e-10);
        let resid = &ky * model.alpha() - &y;
        assert!(resid.norm() / y.norm() <= 1e-8);
    }

    #[test]
    fn interpolates_single_point() {
        let kp = KernelParams::new(0.0, vec![0.0]);
        let model = SgprModel::fit(
            kp,
            1e-12_f64.ln(),
            DMatrix::from_element(1, 1, 0.0),
            DVector::from_element(1, 1.0),
            0.0,
        )
        .unwrap();
        let m = model.predict(&DMatrix::from_element(1, 1, 0.0)).unwrap();
        assert!((m.mean[0] - 1.0).abs() < 1e-9);
        assert!(m.variance[0] < 1e-9);
    }

    #[test]
    fn far_queries_revert_to_prior() {
        let kp = KernelParams::new(0.7, vec![0.0]);
        let x = DMatrix::from_column_slice(3, 1, &[0.0, 0.5, 1.0]);
        let y = DVector::from_vec(vec![1.0, 2.0, 1.5]);
        let model = SgprModel::fit(kp.clone(), -3.0, x, y, 0.0).unwrap();
        let m = model.predict(&DMatrix::from_element(1, 1, 100.0)).unwrap();
        assert!(m.mean[0].abs() < 1e-12);
        assert!((m.variance[0] - (0.7_f64.exp() + (-3.0_f64).exp())).abs() < 1e-12);
    }

    #[test]
    fn variance_never_below_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let (kp, ln, x, y) = random_problem(&mut rng, 15, 1);
        let model = SgprModel::fit(kp, ln, x, y, 0.0).unwrap();
        let xq = DMatrix::from_fn(200, 1, |i, _| -3.0 + 6.0 * i as f64 / 199.0);
        let m = model.predict(&xq).unwrap();
        assert!(m.variance.iter().all(|v| *v >= ln.exp() - 1e-12));
    }

    #[test]
    fn dimension_mismatch_on_predict() {
        let kp = KernelParams::new(0.0, vec![0.0]);
        let model = SgprModel::fit(
            kp,
            -2.0,
            DMatrix::from_column_slice(2, 1, &[0.0, 1.0]),
            DVector::from_vec(vec![0.0, 1.0]),
            0.0,
        )
        .unwrap();
        assert!(matches!(
            model.predict(&DMatrix::zeros(1, 2)),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn trained_model_interpolates_noise_free_sine() {
        let n = 15;
        let x = DMatrix::from_fn(n, 1, |i, _| 2.0 * PI * i as f64 / (n - 1) as f64);
        let y = x.column(0).map(f64::sin);
        let model = train_sgpr(&x, &y, &TrainOptions::default()).unwrap();
        let m = model.predict(&x).unwrap();
        let err = (&m.mean - &y).amax();
        assert!(err <= 1e-6, "max abs error {err}");
    }

    #[test]
    fn training_never_worse_than_initialization() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let (_, _, x, y) = random_problem(&mut rng, 20, 2);
        let opts = TrainOptions {
            n_restarts: 3,
            ..TrainOptions::default()
        };
        let model = train_sgpr(&x, &y, &opts).unwrap();
        let trained = model.nlml().unwrap();
        let (k0, n0) = initial_sgpr_params(&x, &y);
        let mut base = k0.to_vec();
        base.push(n0);
        for start in restart_points(&base, base.len(), &opts) {
            let kp = KernelParams::from_slice(&start[..3]);
            let v = sgpr_nlml(&kp, start[3], &x, &y).unwrap().0;
            assert!(trained <= v + 1e-9, "{trained} > {v}");
        }
    }

    #[test]
    fn constant_targets_warn_and_predict_constant() {
        let x = DMatrix::from_fn(8, 1, |i, _| i as f64);
        let y = DVector::from_element(8, 2.5);
        let opts = TrainOptions {
            center_targets: true,
            n_restarts: 1,
            ..TrainOptions::default()
        };
        let model = train_sgpr(&x, &y, &opts).unwrap();
        assert!(!model.warnings.is_empty());
        let m = model
            .predict(&DMatrix::from_column_slice(2, 1, &[1.5, 3.2]))
            .unwrap();
        assert!(m.mean.iter().all(|v| (v - 2.5).abs() < 1e-6));
        let uncentered = train_sgpr(
            &x,
            &y,
            &TrainOptions {
                n_restarts: 1,
                ..TrainOptions::default()
            },
        )
        .unwrap();
        let m = uncentered
            .predict(&DMatrix::from_column_slice(2, 1, &[1.5, 3.2]))
            .unwrap();
        assert!(
            m.mean.iter().all(|v| (v - 2.5).abs() < 1e-2),
            "{:?}",
            m.mean
        );
    }

    #[test]
    fn noise_estimate_lies_within_true_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let n = 120;
        let x = DMatrix::from_fn(n, 1, |i, _| i as f64 / (n - 1) as f64);
        let y = DVector::from_fn(n, |i, _| {
            let xi = x[(i, 0)];
            let std = 0.05 + 0.15 * xi;
            (3.0 * xi).sin() + Normal::new(0.0, std).unwrap().sample(&mut rng)
        });
        let model = train_sgpr(&x, &y, &TrainOptions::default()).unwrap();
        let nv = model.noise_variance();
        assert!(nv > 0.05_f64.powi(2) && nv < 0.2_f64.powi(2), "{nv}");
    }

    #[test]
    fn duplicated_data_shifts_value_but_not_argmin() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let (kp, ln, x, y) = random_problem(&mut rng, 8, 1);
        let x2 = DMatrix::from_fn(16, 1, |i, _| x[(i % 8, 0)]);
        let y2 = DVector::from_fn(16, |i, _| y[i % 8]);
        // Each duplicated pair splits into its mean (noise s/2) and a zero
        // difference (noise 2s), so the value shifts by n/2 log(4 pi s).
        let s = ln.exp();
        let dup = sgpr_nlml(&kp, ln, &x2, &y2).unwrap().0;
        let half = sgpr_nlml(&kp, (s / 2.0).ln(), &x, &y).unwrap().0;
        let expected = half + 4.0 * (4.0 * PI * s).ln();
        assert!(
            (dup - expected).abs() < 1e-9 * expected.abs(),
            "{dup} vs {expected}"
        );

        let cfg = crate::optim::OptimizerConfig::default();
        let fit = |xs: &DMatrix<f64>, ys: &DVector<f64>, noise: f64| {
            let f = |t: &[f64]| {
                sgpr_nlml(&KernelParams::from_slice(t), noise, xs, ys)
                    .ok()
                    .map(|(v, g)| (v, g[..2].to_vec()))
            };
            crate::optim::minimize(f, &[0.0, 0.0], &cfg).unwrap()
        };
        let a = fit(&x, &y, (s / 2.0).ln());
        let b = fit(&x2, &y2, ln);
        assert!(a.converged() && b.converged());
        for (u, v) in a.x.iter().zip(&b.x) {
            assert!((u - v).abs() < 1e-4, "{:?} vs {:?}", a.x, b.x);
        }
    }
}

//! Initialization, restarts and restart selection shared by both model kinds.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::optim::{minimize, OptimResult, OptimizerConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOptions {
    pub optimizer: OptimizerConfig,
    /// Perturbed restarts in addition to the deterministic initialization.
    pub n_restarts: usize,
    pub seed: u64,
    /// Subtract the training-target mean before fitting (prior mean stays zero otherwise).
    pub center_targets: bool,
    /// Standard deviation of the log-normal restart perturbation.
    pub restart_log_std: f64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            optimizer: OptimizerConfig::default(),
            n_restarts: 5,
            seed: 0,
            center_targets: false,
            restart_log_std: 0.5,
        }
    }
}

pub(crate) fn mean(y: &DVector<f64>) -> f64 {
    if y.is_empty() {
        0.0
    } else {
        y.mean()
    }
}

/// Population variance of the targets.
pub(crate) fn variance(y: &DVector<f64>) -> f64 {
    let m = mean(y);
    y.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / y.len().max(1) as f64
}

/// Scale used to initialize the output and noise variances. Falls back to
/// the squared mean (or 1) for constant targets.
pub(crate) fn target_scale(y: &DVector<f64>) -> (f64, bool) {
    let v = variance(y);
    let m = mean(y);
    if v > 1e-14 * m * m && v > f64::MIN_POSITIVE {
        (v, false)
    } else {
        ((m * m).max(1e-12), true)
    }
}

/// log of each input column's range (log 1 for constant columns).
pub(crate) fn log_ranges(x: &DMatrix<f64>) -> Vec<f64> {
    x.column_iter()
        .map(|c| {
            let lo = c.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = c.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let r = hi - lo;
            if r > 0.0 && r.is_finite() {
                r.ln()
            } else {
                0.0
            }
        })
        .collect()
}

/// Starting points: `base` followed by `n_restarts` copies in which the
/// first `n_perturbed` entries get independent N(0, log_std^2) offsets.
pub(crate) fn restart_points(
    base: &[f64],
    n_perturbed: usize,
    options: &TrainOptions,
) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut starts = vec![base.to_vec()];
    for _ in 0..options.n_restarts {
        let mut p = base.to_vec();
        for v in p.iter_mut().take(n_perturbed) {
            let z: f64 = StandardNormal.sample(&mut rng);
            *v += options.restart_log_std * z;
        }
        starts.push(p);
    }
    starts
}

/// Run the minimizer from every start (in parallel) and keep the lowest
/// objective, breaking ties by start index.
pub(crate) fn best_of_restarts<F>(
    starts: &[Vec<f64>],
    objective: F,
    config: &OptimizerConfig,
) -> Result<(usize, OptimResult)>
where
    F: Fn(&[f64]) -> Option<(f64, Vec<f64>)> + Sync,
{
    let results: Vec<Option<OptimResult>> = starts
        .par_iter()
        .map(|x0| minimize(&objective, x0, config))
        .collect();
    let mut best: Option<(usize, OptimResult)> = None;
    for (i, r) in results.into_iter().enumerate() {
        let Some(r) = r else {
            log::debug!("restart {i} could not be evaluated at its start point");
            continue;
        };
        log::debug!(
            "restart {i}: objective {:.6e} after {} iterations ({:?})",
            r.value,
            r.iterations,
            r.termination
        );
        match &best {
            Some((_, b)) if b.value <= r.value => {}
            _ => best = Some((i, r)),
        }
    }
    best.ok_or_else(|| Error::OptimizerFailure("no restart produced a finite objective".into()))
}

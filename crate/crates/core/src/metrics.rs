//! Held-out fit criteria.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::gp::PredictiveMoments;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitMetrics {
    /// Mean squared error over the mean squared deviation from the training mean.
    pub nmse: f64,
    /// `100 * sum (y - mean)^2 / sum y^2`.
    pub rss_sss_percent: f64,
}

pub fn evaluate_fit(
    moments: &PredictiveMoments,
    y_true: &DVector<f64>,
    y_train: &DVector<f64>,
) -> Result<FitMetrics> {
    if moments.len() != y_true.len() {
        return Err(Error::LengthMismatch(format!(
            "{} predictions for {} targets",
            moments.len(),
            y_true.len()
        )));
    }
    if y_true.is_empty() || y_train.is_empty() {
        return Err(Error::InvalidArgument("no targets to evaluate".into()));
    }
    let m = y_true.len() as f64;
    let train_mean = y_train.mean();
    let rss: f64 = y_true
        .iter()
        .zip(moments.mean.iter())
        .map(|(y, p)| (y - p).powi(2))
        .sum();
    let baseline: f64 = y_true.iter().map(|y| (y - train_mean).powi(2)).sum();
    let sss: f64 = y_true.iter().map(|y| y * y).sum();
    if !(baseline > 0.0) {
        return Err(Error::DegenerateDenominator(
            "targets all equal the training mean".into(),
        ));
    }
    if !(sss > 0.0) {
        return Err(Error::DegenerateDenominator("targets are all zero".into()));
    }
    Ok(FitMetrics {
        nmse: (rss / m) / (baseline / m),
        rss_sss_percent: 100.0 * rss / sss,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn moments(mean: Vec<f64>) -> PredictiveMoments {
        let n = mean.len();
        PredictiveMoments {
            mean: DVector::from_vec(mean),
            variance: DVector::from_element(n, 1.0),
            query_inputs: DMatrix::zeros(n, 1),
        }
    }

    #[test]
    fn perfect_predictions_score_zero() {
        let y = DVector::from_vec(vec![1.0, 2.0, 4.0]);
        let f = evaluate_fit(&moments(y.as_slice().to_vec()), &y, &y).unwrap();
        assert_eq!(f.nmse, 0.0);
        assert_eq!(f.rss_sss_percent, 0.0);
    }

    #[test]
    fn predicting_training_mean_scores_one() {
        let train = DVector::from_vec(vec![1.0, 3.0]);
        let y = DVector::from_vec(vec![0.5, 2.5, 4.0]);
        let f = evaluate_fit(&moments(vec![2.0; 3]), &y, &train).unwrap();
        assert!((f.nmse - 1.0).abs() < 1e-15);
    }

    #[test]
    fn ten_point_case_by_hand() {
        let y = [0.3, 1.1, -0.4, 2.2, 0.9, 1.7, -1.0, 0.0, 0.6, 1.4];
        let p = [0.2, 1.0, -0.1, 2.0, 1.2, 1.5, -0.8, 0.1, 0.5, 1.6];
        let train = DVector::from_vec(vec![0.0, 1.0, 2.0]);
        let f = evaluate_fit(&moments(p.to_vec()), &DVector::from_vec(y.to_vec()), &train).unwrap();
        // residuals squared sum: 0.01+0.01+0.09+0.04+0.09+0.04+0.04+0.01+0.01+0.04
        let rss = 0.38;
        let base: f64 = y.iter().map(|v| (v - 1.0) * (v - 1.0)).sum();
        let sss: f64 = y.iter().map(|v| v * v).sum();
        assert!((f.nmse - rss / base).abs() < 1e-12);
        assert!((f.rss_sss_percent - 100.0 * rss / sss).abs() < 1e-10);
    }

    #[test]
    fn degenerate_denominator_is_an_error() {
        let y = DVector::from_vec(vec![2.0, 2.0]);
        assert!(matches!(
            evaluate_fit(&moments(vec![1.0, 1.0]), &y, &y),
            Err(Error::DegenerateDenominator(_))
        ));
        assert!(matches!(
            evaluate_fit(&moments(vec![1.0]), &y, &y),
            Err(Error::LengthMismatch(_))
        ));
    }
}

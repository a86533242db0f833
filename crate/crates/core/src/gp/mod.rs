//! Gaussian-process regression: kernel, numerics, the homoscedastic model
//! and shared training machinery.

pub mod kernel;
pub mod linalg;
pub mod sgpr;
pub mod train;
pub mod vhgpr;

use nalgebra::{DMatrix, DVector};

use crate::error::Result;

pub use kernel::{kernel_matrix, se_kernel, KernelParams};
pub use linalg::robust_cholesky;
pub use sgpr::{sgpr_nlml, sgpr_predict, train_sgpr, SgprModel};
pub use train::TrainOptions;
pub use vhgpr::{mv_bound, train_vhgpr, vhgpr_predict, VhgprModel, VhgprParams};

/// Mean and variance of the predictive distribution at each query row.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveMoments {
    pub mean: DVector<f64>,
    pub variance: DVector<f64>,
    pub query_inputs: DMatrix<f64>,
}

impl PredictiveMoments {
    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    pub fn std_dev(&self) -> DVector<f64> {
        self.variance.map(f64::sqrt)
    }
}

/// A trained regression model that can be queried for predictive moments.
pub trait Regressor {
    fn dim(&self) -> usize;
    fn train_inputs(&self) -> &DMatrix<f64>;
    fn train_targets(&self) -> &DVector<f64>;
    fn predict(&self, xq: &DMatrix<f64>) -> Result<PredictiveMoments>;
}

impl<R: Regressor + ?Sized> Regressor for &R {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn train_inputs(&self) -> &DMatrix<f64> {
        (**self).train_inputs()
    }
    fn train_targets(&self) -> &DVector<f64> {
        (**self).train_targets()
    }
    fn predict(&self, xq: &DMatrix<f64>) -> Result<PredictiveMoments> {
        (**self).predict(xq)
    }
}

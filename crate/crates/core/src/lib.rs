//! Guided-wave damage quantification: damage indices from baseline/unknown
//! signal pairs, standard and variational heteroscedastic Gaussian-process
//! regression on those indices, and probabilistic state prediction from an
//! incoming damage index.

pub mod damage_index;
pub mod error;
pub mod gp;
pub mod io;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod quantify;
pub mod signals;

pub use error::{Error, Result};

//! Command-line pipeline: simulate guided-wave signals, compute damage
//! indices, train a GP regressor and quantify damage (and load) states.

pub mod config;
pub mod pipeline;

//! Group-lasso family regularizers with partial (masked) regularization for
//! fully connected networks, neuron pruning, and an experiment harness.

pub mod adam;
pub mod backprop;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod experiment;
pub mod model;
pub mod prune;
pub mod regularizers;
pub mod report;
pub mod tensor;

pub use error::{Error, Result};

pub mod baselines;
pub mod checkpoint;
pub mod cli;
pub mod dataset;
pub mod error;
pub mod metrics;
pub mod model;
pub mod tensor;
pub mod uncertainty;

pub use error::{Error, Result};

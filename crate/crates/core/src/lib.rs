pub mod anomaly;
pub mod dataset;
pub mod detection;
pub mod error;
pub mod evaluation;
pub mod nn;
pub mod pipeline;
pub mod predictors;
pub mod rng;
pub mod sim;

pub use error::{Error, Result};

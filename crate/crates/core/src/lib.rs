//! Conditional generative modelling of bearing run-to-failure vibration
//! lifecycles: data pipeline, networks, losses, training, autoregressive
//! generation, evaluation metrics and RUL prediction.

pub mod argen;
pub mod container;
pub mod dataset;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod nets;
pub mod rulpred;
pub mod trainer;

pub use error::{Error, Result};

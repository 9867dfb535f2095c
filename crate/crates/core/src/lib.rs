pub mod alignment;
pub mod campaign;
pub mod channel_sim;
pub mod controller;
pub mod error;
pub mod evaluation;
pub mod predictors;
pub mod rng;
pub mod station;
pub mod stats;
pub mod trace_analysis;
pub mod workload;

pub use error::{Error, Result};
pub use station::StationId;

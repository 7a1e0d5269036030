//! Config-driven orchestration of the forecasting and bidding pipeline.

pub mod config;
pub mod pipeline;

pub use config::{validate_config, RunConfig};
pub use pipeline::{AnyPredictor, Pipeline, RunSummary};

//! Library surface of the scenario runner, exposed so integration tests and
//! the binary share one implementation.

pub mod config;
pub mod manifest;
pub mod reproduce;
pub mod scenario;

pub use config::ScenarioConfig;
pub use scenario::{run_point, run_scenario, PointSummary, ValidationFailed};

//! Experiment harness: configuration, timed runs, oracle verification and
//! plot-data export for the `pi-bench` CLI.

pub mod config;
pub mod harness;
pub mod plot;

pub use config::RunConfig;
pub use harness::{load, run, verify, LoadReport, RunMetrics, VerifyReport};

//! Experiment driver: configuration, dataflow selection strategies,
//! multi-layer model runs, synthetic sweeps and report emission.

pub mod config;
pub mod model;
pub mod report;
pub mod select;

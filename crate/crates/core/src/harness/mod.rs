//! Experiment harness: configuration, instance generation, seeded runs and
//! reporting.

pub mod config;
pub mod envgen;
pub mod experiment;
pub mod report;

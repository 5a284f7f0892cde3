//! Experiment driver for single-page test-time adaptation: data generation,
//! source training, adaptation runs, evaluation, ablations and reports.

pub mod commands;
pub mod config;
pub mod error;
pub mod eval;
pub mod layout;
pub mod run;

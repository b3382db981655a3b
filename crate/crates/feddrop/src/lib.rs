//! Experiment front-end for the federated dropout simulator: run configs,
//! dataset/checkpoint/metrics formats, a thread-pool client executor and the
//! subcommands behind the `feddrop` binary.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod dataset_io;
pub mod error;
pub mod exec;
pub mod metrics;

pub use error::{Error, Result};

//! Simulation, metrics and command-line tooling for the entropy-feature
//! DRAM PUF in [`epuf_core`].

pub mod channel;
pub mod commands;
pub mod config;
pub mod error;
pub mod formats;
pub mod harness;
pub mod metrics;

pub use error::{Error, Result};

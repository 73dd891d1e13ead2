//! Toxicity propagation in multi-agent discussion graphs.

pub mod config;
pub mod dpo;
pub mod error;
pub mod experiment;
pub mod http;
pub mod interventions;
pub mod logfile;
pub mod memory;
pub mod metrics;
pub mod policy;
pub mod rollout;
pub mod scoring;
pub mod seeds;
pub mod stats;
pub mod topology;

pub use error::{Error, Result};

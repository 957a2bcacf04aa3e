pub mod cli;
pub mod client;
pub mod error;
pub mod model;
pub mod orchestrator;
pub mod profiler;
pub mod properties;
pub mod report;
pub mod scheduler;
pub mod seeds;
pub mod shapley_check;
pub mod stats;
pub mod synth;
pub mod theory;
pub mod tokens;

pub use error::{Error, Result};

//! Dataset construction, experiment drivers and report formatting behind the
//! `snapfocus` command line.

pub mod benchrun;
pub mod config;
pub mod dataset;
pub mod edof;
pub mod error;
pub mod eval;
pub mod pipeline;

pub use config::PipelineConfig;
pub use error::{BenchError, Result};

//! Pipeline driver behind the `multidex` binary.

pub mod config;
pub mod manifest;
pub mod pipeline;

pub use config::PipelineConfig;
pub use pipeline::{Layout, Pipeline, Stage};

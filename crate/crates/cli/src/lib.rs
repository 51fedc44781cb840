//! File-based pipeline around the `mgembed` library: synthetic data,
//! per-graph embedding, cold-start fill, fusion, classification and
//! evaluation, each runnable as its own stage or chained end to end.

pub mod config;
pub mod error;
pub mod stages;

pub use config::PipelineConfig;
pub use error::CliError;
pub use stages::Task;

//! Configuration and orchestration behind the `kwasr` command.

pub mod config;
pub mod pipeline;

pub use config::ExperimentConfig;

//! Model configuration, assembly, cost accounting and checkpoints.

pub mod checkpoint;
pub mod config;
pub mod cost;
mod network;

pub use checkpoint::{read_archive, write_archive, ArchiveTensor};
pub use config::{ModelConfig, StageConfig, PRESETS};
pub use cost::{CostReport, CostRow, CostTotals, FeatureShape};
pub use network::{Model, Stage};

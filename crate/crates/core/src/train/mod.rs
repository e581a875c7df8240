//! Desk-scale supervised training: AdamW, the warmup/cosine schedule,
//! datasets and the epoch loop.

mod data;
mod optim;
mod schedule;
mod trainer;

pub use data::{Augment, Dataset};
pub use optim::{AdamW, AdamWConfig};
pub use schedule::LrSchedule;
pub use trainer::{evaluate, EpochMetrics, EvalMetrics, MetricsLog, TrainConfig, Trainer};

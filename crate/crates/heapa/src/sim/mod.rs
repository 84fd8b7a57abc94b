//! Desk-scale synthetic environment and the full training loop.

pub mod config;
pub mod item;
pub mod policy;
pub mod run;
pub mod teacher;
pub mod timing;

pub use config::RunConfig;
pub use run::{RunLog, TrainingRun};

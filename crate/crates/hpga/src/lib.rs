//! Files, training and evaluation around `hpga-core`: JSON Lines datasets,
//! binary checkpoints, TOML run configs and CSV metrics.

pub mod bench;
pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod error;
pub mod metrics;
pub mod run;

pub use checkpoint::Checkpoint;
pub use config::{RunConfig, Task, Variant};
pub use dataset::{generate_dataset, read_dataset, Dataset};
pub use error::{Error, Result};
pub use run::{ablate_eta, train, Run, TrainData, TrainReport};

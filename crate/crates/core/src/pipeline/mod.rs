//! The operational shell around the model: configuration, optimizer,
//! synthetic data, checkpoints, record files, training and the commands.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod data;
pub mod optim;
pub mod records;
pub mod suite;
pub mod train;

pub use checkpoint::Checkpoint;
pub use config::{Config, TrainConfig};
pub use data::{make_dataset, Sample};
pub use optim::{lr_schedule, Adam};
pub use train::Trainer;

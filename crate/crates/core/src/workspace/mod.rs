//! Datasets, checkpoint bundles and experiment configuration.

pub mod checkpoint;
pub mod config;
pub mod dataset;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use config::{ExperimentConfig, OutputPaths};
pub use dataset::{load_image_folder, make_synthetic_dataset, Dataset, DatasetSpec, SyntheticSpec, ATTRIBUTES};

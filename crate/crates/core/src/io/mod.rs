//! On-disk formats: checkpoints, run configs and images.

mod checkpoint;
pub mod image;
mod runconfig;

pub use checkpoint::{config_digest, Checkpoint, CheckpointEntry, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use image::GrayImage;
pub use runconfig::RunConfig;

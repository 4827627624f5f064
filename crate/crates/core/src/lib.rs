pub mod cli;
pub mod dataset;
pub mod error;
pub mod geometry;
pub mod io;
pub mod model;
pub mod nn;
pub mod oracle;
pub mod scene;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};

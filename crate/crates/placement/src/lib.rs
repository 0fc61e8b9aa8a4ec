//! File formats, the training driver and the command-line interface for
//! scene-graph conditioned object placement. The model itself lives in
//! `placement_core`.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod embedding_file;
pub mod error;
pub mod graph_file;
pub mod image_file;
pub mod pipeline;

pub use error::{Error, Result};

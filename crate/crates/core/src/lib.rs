#![no_std]
//! Scene-graph conditioned object placement.
//!
//! Everything here is pure computation over in-memory values and builds
//! without `std`; file formats, the training driver and the CLI live in
//! the companion `placement` crate.

extern crate alloc;

pub mod augment;
pub mod autograd;
pub mod composer;
pub mod conv;
pub mod cross_attention;
pub mod data;
pub mod discriminator;
pub mod embedding;
pub mod error;
pub mod gtn;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod sampler;
pub mod scalar;
pub mod scene_graph;
pub mod spatial;
pub mod synthetic;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::Tensor;

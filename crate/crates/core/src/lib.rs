//! Lossless RGB image compression with a multi-scale progressive model.
//!
//! The image is split into nested scales and each scale's new pixels into
//! ordered groups. A convolutional context network predicts a discretized
//! mixture of logistics for every pixel of the next group, and a range coder
//! turns those distributions into bits.

pub mod checkpoint;
pub mod cli;
pub mod codec;
pub mod coder;
pub mod dmol;
pub mod error;
pub mod grouping;
pub mod image;
pub mod net;
pub mod progressive;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use image::Image8;

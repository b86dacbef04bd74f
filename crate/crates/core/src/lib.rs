//! Core library for user-guided grayscale colorization.

pub mod bench;
pub mod colorspace;
pub mod error;
pub mod hints;
pub mod levin;
pub mod model;
pub mod nn;
pub mod palette;
pub mod pipeline;

pub use error::{Error, Result};

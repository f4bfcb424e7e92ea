//! Learns scene-dependent camera color rendering in both directions
//! (white-balanced RAW to sRGB and back) from RAW/sRGB image pairs.
//!
//! The network converts the input image to lightness/chromaticity, builds a
//! learnable soft histogram per pixel, pools it into a four-scale pyramid of
//! local and global color context, and regresses output colors from the
//! concatenated per-pixel features with a small convolutional head. All
//! gradients are written by hand; see [`tensor`] for the kernels.

pub mod checkpoint;
pub mod colorhist;
pub mod data;
pub mod error;
pub mod model;
pub mod pyramid;
pub mod selfcheck;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use tensor::{Shape, Tensor};

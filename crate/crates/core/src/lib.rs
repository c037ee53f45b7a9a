//! Point-cloud neural rendering by radiance mapping.
//!
//! The pipeline has three stages:
//!
//! 1. [`raster`]: per pixel, find the nearest point that lies within a radius
//!    threshold of the pixel ray and record its camera-space depth.
//! 2. [`sampling`] + [`models::mlp`]: move the winning point onto the pixel
//!    ray at the recorded depth, positionally encode it together with the
//!    view direction, and map it to a latent feature with a small MLP.
//! 3. [`models::refine`]: a gated-convolution U-Net turns the sparse feature
//!    map into an RGB image.
//!
//! Everything trainable is expressed with the reverse-mode [`tape`] engine.
//! The crate is `no_std` (with `alloc`); file formats and the command line
//! live in the `radmap` crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod adam;
pub mod camera;
pub mod cloud;
pub mod geometry;
pub mod gradcheck;
pub mod image;
mod linalg;
pub mod metrics;
pub mod models;
pub mod pipeline;
pub mod raster;
pub mod sampling;
pub mod scene;
pub mod tape;
pub mod tensor;
pub mod training;

pub use adam::{AdamConfig, AdamState};
pub use camera::{Camera, CameraError};
pub use cloud::PointCloud;
pub use geometry::{Aabb, Rigid, Vec3};
pub use image::Image;
pub use pipeline::{ModelConfig, Pipeline};
pub use raster::{FragmentBuffer, RasterConfig};
pub use sampling::{EncodingConfig, QueryBatch};
pub use tape::{Tape, Var};
pub use tensor::{Tensor, TensorError};

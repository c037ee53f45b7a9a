//! File formats and command-line driver for the `radmap_core` renderer.
//!
//! - [`ply`], [`png_io`], [`transforms`]: point clouds, images, cameras.
//! - [`checkpoint`]: the RMCK tensor archive; [`run`] stores models in it.
//! - [`dataset`]: scene directories with a hashed manifest.
//! - [`cli`] and [`commands`]: the `radmap` binary.

pub mod checkpoint;
pub mod cli;
pub mod commands;
pub mod dataset;
pub mod error;
pub mod ply;
pub mod png_io;
pub mod run;
pub mod transforms;

pub use error::{Error, Result};

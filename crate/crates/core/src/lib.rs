//! Fitting, quantizing, baking and ray marching of memory-efficient radiance
//! fields for unbounded scenes.
//!
//! A scene is a sum of a low-resolution voxel grid and three high-resolution
//! planes living in a contracted cube `[-2, 2]³`. Fitted grids are quantized
//! to bytes, culled with occupancy derived from training rays and stored as a
//! block-sparse bundle that a CPU marcher (and a browser viewer) renders.

pub mod assets;
pub mod bake;
pub mod cli;
pub mod contraction;
pub mod error;
pub mod fit;
pub mod field;
pub mod math;
pub mod render;

pub use error::{Error, Result};

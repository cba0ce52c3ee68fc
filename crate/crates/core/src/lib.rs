//! Pre-training target generation for monocular 3D detection.
//!
//! Lidar returns are projected into the camera, filtered to detected boxes and
//! densified by uncertainty-guided propagation; 2D boxes become corner and
//! center heatmaps. The loss functions that consume these targets carry
//! analytic gradients, and [`toygrad`] runs the whole loop on a small
//! synthetic model.

// `!(x > 0.0)` style checks are deliberate: they reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod depth_targets;
pub mod error;
pub mod geometry;
pub mod gradcheck;
pub mod io_formats;
pub mod keypoint_targets;
pub mod losses;
pub mod pipeline;
pub mod toygrad;

pub use error::{Error, Result};

//! Voxel instance fields for multi-view 3D instance segmentation.
//!
//! A scene is a set of explicit voxel grids (density, color, instance
//! logits) rendered by ray quadrature. Instance logits are trained from
//! multi-view 2D label maps whose ids have been made consistent by
//! projecting 3D instance masks into every view.

pub mod detect;
pub mod error;
pub mod field;
pub mod fixture;
pub mod image;
pub mod io;
pub mod matching;
pub mod metrics;
pub mod pipeline;
pub mod render;
pub mod scene;

pub use error::{Error, Result};

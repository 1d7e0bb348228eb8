//! World-space grids, cameras and rays.

mod camera;
mod grid;

pub use camera::{ray_aabb_intersect, Camera, CameraRecord, Ray};
pub use grid::{SceneBounds, StencilTap, VoxelGrid};

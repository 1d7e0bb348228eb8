use glam::DVec3;

use crate::detect::boxes::Aabb;
use crate::error::{Error, Result};
use crate::scene::VoxelGrid;

/// Resamples `features` inside `roi` onto an `out_res^3` lattice.
///
/// Each output cell averages `sampling^3` trilinear samples taken at the
/// centers of an even subdivision of the cell (`sampling = 1`: the cell
/// center). Samples falling outside the feature bounds use clamped
/// lookups. The result is a grid over the RoI whose voxel centers are the
/// cell centers.
pub fn roi_align_3d(
    features: &VoxelGrid,
    roi: &Aabb,
    out_res: usize,
    sampling: usize,
) -> Result<VoxelGrid> {
    if out_res == 0 || sampling == 0 {
        return Err(Error::invalid(
            "output resolution and sampling must be positive",
        ));
    }
    let b = features.bounds();
    let (lo, hi) = (roi.min(), roi.max());
    if lo.cmpgt(b.max()).any() || hi.cmplt(b.min()).any() {
        return Err(Error::invalid(format!(
            "roi {:?} lies entirely outside the feature grid",
            roi
        )));
    }
    let c = features.channels();
    let cell = DVec3::from_array(roi.size) / out_res as f64;
    let sub = cell / sampling as f64;
    let inv = 1.0 / (sampling * sampling * sampling) as f64;
    let mut scratch = vec![0.0; c];
    VoxelGrid::from_fn([out_res; 3], c, roi.as_bounds(), |center, out| {
        let corner = center - 0.5 * cell;
        for sz in 0..sampling {
            for sy in 0..sampling {
                for sx in 0..sampling {
                    let p = corner
                        + DVec3::new(sx as f64 + 0.5, sy as f64 + 0.5, sz as f64 + 0.5) * sub;
                    features.blend(&features.stencil_unchecked(p), &mut scratch);
                    for (o, s) in out.iter_mut().zip(&scratch) {
                        *o += s * inv;
                    }
                }
            }
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::SceneBounds;

    #[test]
    fn constant_features_stay_constant() {
        let grid = VoxelGrid::filled([6, 6, 6], 2, SceneBounds::cube(1.0), 0.7).unwrap();
        let roi = Aabb::new([0.1, -0.2, 0.3], [0.8, 0.5, 0.6]).unwrap();
        let out = roi_align_3d(&grid, &roi, 4, 1).unwrap();
        assert_eq!(out.dims(), [4, 4, 4]);
        assert!(out.data().iter().all(|v| (v - 0.7).abs() < 1e-12));
    }

    #[test]
    fn linear_ramp_is_reproduced() {
        let grid = VoxelGrid::from_fn([8, 8, 8], 1, SceneBounds::cube(1.0), |p, o| {
            o[0] = 2.0 * p.x + 1.0
        })
        .unwrap();
        let roi = Aabb::new([0.0, 0.0, 0.0], [1.0, 1.0, 1.0]).unwrap();
        let out = roi_align_3d(&grid, &roi, 5, 1).unwrap();
        for iz in 0..5 {
            for iy in 0..5 {
                for ix in 0..5 {
                    let x = -0.5 + (ix as f64 + 0.5) / 5.0;
                    let v = out.voxel(out.voxel_index(ix, iy, iz))[0];
                    assert!((v - (2.0 * x + 1.0)).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn roi_outside_grid_is_an_error() {
        let grid = VoxelGrid::zeros([4, 4, 4], 1, SceneBounds::cube(1.0)).unwrap();
        let roi = Aabb::new([3.0, 0.0, 0.0], [1.0; 3]).unwrap();
        assert!(roi_align_3d(&grid, &roi, 2, 1).is_err());
    }
}

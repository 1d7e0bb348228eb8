use glam::DVec3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned world-space volume that every grid of a scene covers.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneBounds {
    #[serde(rename = "min")]
    pub min_corner: [f64; 3],
    #[serde(rename = "max")]
    pub max_corner: [f64; 3],
}

impl SceneBounds {
    pub fn new(min_corner: [f64; 3], max_corner: [f64; 3]) -> Result<Self> {
        let bounds = SceneBounds {
            min_corner,
            max_corner,
        };
        bounds.validate()?;
        Ok(bounds)
    }

    /// The cube `[-half, half]^3`.
    pub fn cube(half: f64) -> Self {
        SceneBounds {
            min_corner: [-half; 3],
            max_corner: [half; 3],
        }
    }

    pub fn validate(&self) -> Result<()> {
        for axis in 0..3 {
            let (lo, hi) = (self.min_corner[axis], self.max_corner[axis]);
            if !lo.is_finite() || !hi.is_finite() {
                return Err(Error::NonFinite(format!("bounds axis {axis}")));
            }
            if hi <= lo {
                return Err(Error::invalid(format!(
                    "bounds axis {axis}: max {hi} must exceed min {lo}"
                )));
            }
        }
        Ok(())
    }

    pub fn min(&self) -> DVec3 {
        DVec3::from_array(self.min_corner)
    }

    pub fn max(&self) -> DVec3 {
        DVec3::from_array(self.max_corner)
    }

    pub fn extent(&self) -> DVec3 {
        self.max() - self.min()
    }

    pub fn contains(&self, p: DVec3) -> bool {
        p.cmpge(self.min()).all() && p.cmple(self.max()).all()
    }
}

/// One corner of a trilinear stencil: flat voxel index and its blend weight.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StencilTap {
    pub voxel: usize,
    pub weight: f64,
}

/// Dense voxel array over [`SceneBounds`].
///
/// Layout is voxel-major with x fastest, then y, then z; the `channels`
/// values of a voxel are stored contiguously. Voxel `(ix, iy, iz)` is
/// centered at `min + (i + 0.5) * extent / dims`.
#[derive(Clone, Debug, PartialEq)]
pub struct VoxelGrid {
    dims: [usize; 3],
    channels: usize,
    bounds: SceneBounds,
    data: Vec<f64>,
}

impl VoxelGrid {
    pub fn zeros(dims: [usize; 3], channels: usize, bounds: SceneBounds) -> Result<Self> {
        Self::filled(dims, channels, bounds, 0.0)
    }

    pub fn filled(
        dims: [usize; 3],
        channels: usize,
        bounds: SceneBounds,
        value: f64,
    ) -> Result<Self> {
        let len = checked_len(dims, channels)?;
        bounds.validate()?;
        if !value.is_finite() {
            return Err(Error::NonFinite("fill value".into()));
        }
        Ok(VoxelGrid {
            dims,
            channels,
            bounds,
            data: vec![value; len],
        })
    }

    pub fn from_data(
        dims: [usize; 3],
        channels: usize,
        bounds: SceneBounds,
        data: Vec<f64>,
    ) -> Result<Self> {
        let len = checked_len(dims, channels)?;
        bounds.validate()?;
        if data.len() != len {
            return Err(Error::mismatch(format!(
                "grid {dims:?}x{channels} needs {len} values, got {}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("grid value at flat index {i}")));
        }
        Ok(VoxelGrid {
            dims,
            channels,
            bounds,
            data,
        })
    }

    /// Builds a grid by evaluating `f` at every voxel center.
    pub fn from_fn(
        dims: [usize; 3],
        channels: usize,
        bounds: SceneBounds,
        mut f: impl FnMut(DVec3, &mut [f64]),
    ) -> Result<Self> {
        let mut grid = Self::zeros(dims, channels, bounds)?;
        for iz in 0..dims[2] {
            for iy in 0..dims[1] {
                for ix in 0..dims[0] {
                    let center = grid.voxel_center(ix, iy, iz);
                    let v = grid.voxel_index(ix, iy, iz);
                    f(center, &mut grid.data[v * channels..(v + 1) * channels]);
                }
            }
        }
        if let Some(i) = grid.data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("grid value at flat index {i}")));
        }
        Ok(grid)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn bounds(&self) -> &SceneBounds {
        &self.bounds
    }

    pub fn voxel_count(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn voxel_size(&self) -> DVec3 {
        self.bounds.extent()
            / DVec3::new(
                self.dims[0] as f64,
                self.dims[1] as f64,
                self.dims[2] as f64,
            )
    }

    pub fn voxel_index(&self, ix: usize, iy: usize, iz: usize) -> usize {
        ix + self.dims[0] * (iy + self.dims[1] * iz)
    }

    pub fn voxel_coords(&self, voxel: usize) -> [usize; 3] {
        let ix = voxel % self.dims[0];
        let iy = (voxel / self.dims[0]) % self.dims[1];
        let iz = voxel / (self.dims[0] * self.dims[1]);
        [ix, iy, iz]
    }

    pub fn voxel_center(&self, ix: usize, iy: usize, iz: usize) -> DVec3 {
        self.bounds.min() + (DVec3::new(ix as f64, iy as f64, iz as f64) + 0.5) * self.voxel_size()
    }

    pub fn voxel(&self, voxel: usize) -> &[f64] {
        &self.data[voxel * self.channels..(voxel + 1) * self.channels]
    }

    pub fn voxel_mut(&mut self, voxel: usize) -> &mut [f64] {
        &mut self.data[voxel * self.channels..(voxel + 1) * self.channels]
    }

    pub fn same_layout(&self, other: &VoxelGrid) -> bool {
        self.dims == other.dims && self.channels == other.channels && self.bounds == other.bounds
    }

    /// The eight corner taps of the trilinear blend at `point`.
    ///
    /// Coordinates are clamped to the outermost voxel centers, so points in
    /// the boundary half-voxel (or outside the bounds) take edge values.
    /// Weights are non-negative and sum to one.
    pub fn stencil(&self, point: DVec3) -> Result<[StencilTap; 8]> {
        if !point.is_finite() {
            return Err(Error::NonFinite(format!("sample point {point}")));
        }
        Ok(self.stencil_unchecked(point))
    }

    pub(crate) fn stencil_unchecked(&self, point: DVec3) -> [StencilTap; 8] {
        let rel = (point - self.bounds.min()) / self.voxel_size() - 0.5;
        let mut lo = [0usize; 3];
        let mut hi = [0usize; 3];
        let mut frac = [0f64; 3];
        for axis in 0..3 {
            let n = self.dims[axis];
            let u = rel[axis].clamp(0.0, (n - 1) as f64);
            let i0 = (u.floor() as usize).min(n.saturating_sub(2));
            lo[axis] = i0;
            hi[axis] = (i0 + 1).min(n - 1);
            frac[axis] = if n == 1 { 0.0 } else { u - i0 as f64 };
        }
        let mut taps = [StencilTap {
            voxel: 0,
            weight: 0.0,
        }; 8];
        for (corner, tap) in taps.iter_mut().enumerate() {
            let pick = |axis: usize| (corner >> axis) & 1 == 1;
            let mut weight = 1.0;
            let mut idx = [0usize; 3];
            for axis in 0..3 {
                if pick(axis) {
                    idx[axis] = hi[axis];
                    weight *= frac[axis];
                } else {
                    idx[axis] = lo[axis];
                    weight *= 1.0 - frac[axis];
                }
            }
            *tap = StencilTap {
                voxel: self.voxel_index(idx[0], idx[1], idx[2]),
                weight,
            };
        }
        taps
    }

    /// Trilinear sample of all channels at a world-space point.
    pub fn sample(&self, point: DVec3) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.channels];
        self.sample_into(point, &mut out)?;
        Ok(out)
    }

    pub fn sample_into(&self, point: DVec3, out: &mut [f64]) -> Result<()> {
        if out.len() != self.channels {
            return Err(Error::mismatch(format!(
                "output has {} channels, grid has {}",
                out.len(),
                self.channels
            )));
        }
        let taps = self.stencil(point)?;
        self.blend(&taps, out);
        Ok(())
    }

    /// First-channel trilinear sample; used for density and occupancy grids.
    pub(crate) fn sample_scalar(&self, point: DVec3) -> f64 {
        let c = self.channels;
        self.stencil_unchecked(point)
            .iter()
            .map(|tap| tap.weight * self.data[tap.voxel * c])
            .sum()
    }

    pub(crate) fn blend(&self, taps: &[StencilTap; 8], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        let c = self.channels;
        for tap in taps {
            let src = &self.data[tap.voxel * c..(tap.voxel + 1) * c];
            for (o, s) in out.iter_mut().zip(src) {
                *o += tap.weight * s;
            }
        }
    }
}

fn checked_len(dims: [usize; 3], channels: usize) -> Result<usize> {
    if dims.iter().any(|&d| d == 0) || channels == 0 {
        return Err(Error::invalid(format!(
            "grid dims {dims:?} and channels {channels} must be positive"
        )));
    }
    dims.iter()
        .try_fold(channels, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::invalid("grid size overflows".to_string()))
}

use glam::{DMat3, DVec3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::grid::SceneBounds;

/// Pinhole camera. Looks along local -z with +y up and +x right; pixel
/// `(i, j)` is row `i`, column `j`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CameraRecord", into = "CameraRecord")]
pub struct Camera {
    pub width: usize,
    pub height: usize,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// Row-major rigid camera-to-world transform.
    pub cam_to_world: [[f64; 4]; 4],
}

/// On-disk camera record: the same fields with a flat row-major matrix.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CameraRecord {
    pub width: usize,
    pub height: usize,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub cam_to_world: [f64; 16],
}

impl TryFrom<CameraRecord> for Camera {
    type Error = Error;

    fn try_from(r: CameraRecord) -> Result<Self> {
        let mut m = [[0.0; 4]; 4];
        for (row, chunk) in m.iter_mut().zip(r.cam_to_world.chunks_exact(4)) {
            row.copy_from_slice(chunk);
        }
        let cam = Camera {
            width: r.width,
            height: r.height,
            fx: r.fx,
            fy: r.fy,
            cx: r.cx,
            cy: r.cy,
            cam_to_world: m,
        };
        cam.validate()?;
        Ok(cam)
    }
}

impl From<Camera> for CameraRecord {
    fn from(c: Camera) -> Self {
        let mut flat = [0.0; 16];
        for (chunk, row) in flat.chunks_exact_mut(4).zip(c.cam_to_world.iter()) {
            chunk.copy_from_slice(row);
        }
        CameraRecord {
            width: c.width,
            height: c.height,
            fx: c.fx,
            fy: c.fy,
            cx: c.cx,
            cy: c.cy,
            cam_to_world: flat,
        }
    }
}

impl Camera {
    /// Camera at `eye` looking at `target`, with the principal point at the
    /// image center and a horizontal field of view of `fov_x` radians.
    pub fn look_at(
        eye: DVec3,
        target: DVec3,
        up: DVec3,
        width: usize,
        height: usize,
        fov_x: f64,
    ) -> Result<Self> {
        let forward = (target - eye).normalize_or_zero();
        let right = forward.cross(up).normalize_or_zero();
        if forward == DVec3::ZERO || right == DVec3::ZERO {
            return Err(Error::invalid("degenerate look-at frame"));
        }
        let true_up = right.cross(forward);
        let back = -forward;
        let fx = 0.5 * width as f64 / (0.5 * fov_x).tan();
        let cols = [right, true_up, back];
        let mut m = [[0.0; 4]; 4];
        for (r, row) in m.iter_mut().take(3).enumerate() {
            for (c, col) in cols.iter().enumerate() {
                row[c] = col[r];
            }
            row[3] = eye[r];
        }
        m[3] = [0.0, 0.0, 0.0, 1.0];
        let cam = Camera {
            width,
            height,
            fx,
            fy: fx,
            cx: 0.5 * width as f64,
            cy: 0.5 * height as f64,
            cam_to_world: m,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("camera image size must be positive"));
        }
        if !(self.fx > 0.0 && self.fy > 0.0) || !self.cx.is_finite() || !self.cy.is_finite() {
            return Err(Error::invalid(
                "camera intrinsics must be finite with fx, fy > 0",
            ));
        }
        if self.cam_to_world.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("camera pose".into()));
        }
        let r = self.rotation();
        let gram = r.transpose() * r;
        let err = (gram - DMat3::IDENTITY)
            .to_cols_array()
            .iter()
            .fold(0.0f64, |a, v| a.max(v.abs()));
        if err > 1e-6 {
            return Err(Error::invalid(format!(
                "camera rotation is not orthonormal (max deviation {err:e})"
            )));
        }
        Ok(())
    }

    pub fn rotation(&self) -> DMat3 {
        let m = &self.cam_to_world;
        DMat3::from_cols(
            DVec3::new(m[0][0], m[1][0], m[2][0]),
            DVec3::new(m[0][1], m[1][1], m[2][1]),
            DVec3::new(m[0][2], m[1][2], m[2][2]),
        )
    }

    pub fn position(&self) -> DVec3 {
        let m = &self.cam_to_world;
        DVec3::new(m[0][3], m[1][3], m[2][3])
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    /// Ray through pixel `(i, j)`. `jitter` replaces the default in-pixel
    /// offset of (0.5, 0.5), given as (row offset, column offset).
    pub fn generate_ray(&self, i: usize, j: usize, jitter: Option<(f64, f64)>) -> Ray {
        let (oy, ox) = jitter.unwrap_or((0.5, 0.5));
        let local = DVec3::new(
            (j as f64 + ox - self.cx) / self.fx,
            -(i as f64 + oy - self.cy) / self.fy,
            -1.0,
        );
        Ray {
            origin: self.position(),
            direction: (self.rotation() * local).normalize(),
            pixel: (i, j),
        }
    }

    /// Continuous (row, column) image coordinates of a world point; pixel
    /// `(i, j)` has its center at `(i + 0.5, j + 0.5)`. `None` behind the
    /// camera.
    pub fn project(&self, point: DVec3) -> Option<(f64, f64)> {
        let local = self.rotation().transpose() * (point - self.position());
        if local.z >= 0.0 {
            return None;
        }
        let depth = -local.z;
        let col = self.fx * local.x / depth + self.cx;
        let row = self.cy - self.fy * local.y / depth;
        Some((row, col))
    }
}

/// Half-line `origin + t * direction`, `t >= 0`, through a pixel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray {
    pub origin: DVec3,
    pub direction: DVec3,
    pub pixel: (usize, usize),
}

impl Ray {
    pub fn at(&self, t: f64) -> DVec3 {
        self.origin + t * self.direction
    }
}

/// Slab-method entry/exit distances of a ray through the bounds, with the
/// entry clamped to zero. `None` when the ray misses or the box lies
/// behind the origin.
pub fn ray_aabb_intersect(ray: &Ray, bounds: &SceneBounds) -> Option<(f64, f64)> {
    let mut t_near = f64::NEG_INFINITY;
    let mut t_far = f64::INFINITY;
    for axis in 0..3 {
        let o = ray.origin[axis];
        let d = ray.direction[axis];
        let (lo, hi) = (bounds.min_corner[axis], bounds.max_corner[axis]);
        if d == 0.0 {
            if o < lo || o > hi {
                return None;
            }
            continue;
        }
        let (mut t0, mut t1) = ((lo - o) / d, (hi - o) / d);
        if t0 > t1 {
            std::mem::swap(&mut t0, &mut t1);
        }
        t_near = t_near.max(t0);
        t_far = t_far.min(t1);
    }
    let t_near = t_near.max(0.0);
    if t_far <= 0.0 || t_far < t_near {
        return None;
    }
    Some((t_near, t_far))
}

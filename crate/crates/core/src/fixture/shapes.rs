use glam::DVec3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::{ray_aabb_intersect, Ray, SceneBounds};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeKind {
    Box,
    Sphere,
    /// Axis along z.
    Cylinder,
}

/// A solid primitive. `size` is the full extent along x, y and z; spheres
/// use `size[0]` as diameter, cylinders `size[0]` as diameter and `size[2]`
/// as height.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Shape {
    pub kind: ShapeKind,
    pub center: [f64; 3],
    pub size: [f64; 3],
}

impl Shape {
    pub fn validate(&self) -> Result<()> {
        let used: &[f64] = match self.kind {
            ShapeKind::Box => &self.size,
            ShapeKind::Sphere => &self.size[..1],
            ShapeKind::Cylinder => &[self.size[0], self.size[2]],
        };
        if used.iter().any(|&s| !(s > 0.0 && s.is_finite()))
            || self.center.iter().any(|c| !c.is_finite())
        {
            return Err(Error::invalid(format!(
                "invalid {:?} parameters",
                self.kind
            )));
        }
        Ok(())
    }

    fn center(&self) -> DVec3 {
        DVec3::from_array(self.center)
    }

    /// Tight axis-aligned extent.
    pub fn extent(&self) -> DVec3 {
        let [a, b, c] = self.size;
        match self.kind {
            ShapeKind::Box => DVec3::new(a, b, c),
            ShapeKind::Sphere => DVec3::splat(a),
            ShapeKind::Cylinder => DVec3::new(a, a, c),
        }
    }

    pub fn contains(&self, p: DVec3) -> bool {
        let d = p - self.center();
        match self.kind {
            ShapeKind::Box => (d.abs() * 2.0).cmple(self.extent()).all(),
            ShapeKind::Sphere => d.length_squared() * 4.0 <= self.size[0] * self.size[0],
            ShapeKind::Cylinder => {
                (d.x * d.x + d.y * d.y) * 4.0 <= self.size[0] * self.size[0]
                    && d.z.abs() * 2.0 <= self.size[2]
            }
        }
    }

    /// Entry and exit distances of the full line `origin + t * direction`.
    fn line_interval(&self, ray: &Ray) -> Option<(f64, f64)> {
        let c = self.center();
        let o = ray.origin - c;
        let d = ray.direction;
        match self.kind {
            ShapeKind::Box => {
                let half = self.extent() * 0.5;
                slab(o, d, -half, half)
            }
            ShapeKind::Sphere => {
                let r = 0.5 * self.size[0];
                quadratic(
                    d.length_squared(),
                    2.0 * o.dot(d),
                    o.length_squared() - r * r,
                )
            }
            ShapeKind::Cylinder => {
                let r = 0.5 * self.size[0];
                let h = 0.5 * self.size[2];
                let a = d.x * d.x + d.y * d.y;
                let side = if a < 1e-18 {
                    if o.x * o.x + o.y * o.y > r * r {
                        return None;
                    }
                    (f64::NEG_INFINITY, f64::INFINITY)
                } else {
                    quadratic(
                        a,
                        2.0 * (o.x * d.x + o.y * d.y),
                        o.x * o.x + o.y * o.y - r * r,
                    )?
                };
                let caps = slab(
                    o,
                    d,
                    DVec3::new(f64::NEG_INFINITY, f64::NEG_INFINITY, -h),
                    DVec3::new(f64::INFINITY, f64::INFINITY, h),
                )?;
                let (t0, t1) = (side.0.max(caps.0), side.1.min(caps.1));
                (t0 <= t1).then_some((t0, t1))
            }
        }
    }

    /// Distance along the ray to the first point of the solid, 0 when the
    /// origin is inside.
    pub fn ray_hit(&self, ray: &Ray) -> Option<f64> {
        let (t0, t1) = self.line_interval(ray)?;
        (t1 >= 0.0).then(|| t0.max(0.0))
    }

    /// Fraction of `n^3` sub-cell samples of the cell `[lo, lo + size]`
    /// inside the solid.
    pub fn coverage(&self, lo: DVec3, size: DVec3, n: usize) -> f64 {
        let ext = self.extent() * 0.5;
        let c = self.center();
        if (lo + size).cmplt(c - ext).any() || lo.cmpgt(c + ext).any() {
            return 0.0;
        }
        let mut inside = 0usize;
        for z in 0..n {
            for y in 0..n {
                for x in 0..n {
                    let f = DVec3::new(x as f64 + 0.5, y as f64 + 0.5, z as f64 + 0.5) / n as f64;
                    inside += self.contains(lo + f * size) as usize;
                }
            }
        }
        inside as f64 / (n * n * n) as f64
    }

    pub fn inside_bounds(&self, bounds: &SceneBounds) -> bool {
        let half = self.extent() * 0.5;
        let c = self.center();
        (c - half).cmpge(bounds.min()).all() && (c + half).cmple(bounds.max()).all()
    }
}

fn slab(o: DVec3, d: DVec3, lo: DVec3, hi: DVec3) -> Option<(f64, f64)> {
    let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
    for axis in 0..3 {
        if d[axis] == 0.0 {
            if o[axis] < lo[axis] || o[axis] > hi[axis] {
                return None;
            }
            continue;
        }
        let (mut a, mut b) = (
            (lo[axis] - o[axis]) / d[axis],
            (hi[axis] - o[axis]) / d[axis],
        );
        if a > b {
            std::mem::swap(&mut a, &mut b);
        }
        t0 = t0.max(a);
        t1 = t1.min(b);
    }
    (t0 <= t1).then_some((t0, t1))
}

fn quadratic(a: f64, b: f64, c: f64) -> Option<(f64, f64)> {
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return None;
    }
    let s = disc.sqrt();
    Some(((-b - s) / (2.0 * a), (-b + s) / (2.0 * a)))
}

/// Nearest hit among `shapes`: `(index, distance)`; ties keep the lower
/// index. Only hits inside `bounds` count.
pub fn first_hit(shapes: &[Shape], ray: &Ray, bounds: &SceneBounds) -> Option<(usize, f64)> {
    ray_aabb_intersect(ray, bounds)?;
    let mut best: Option<(usize, f64)> = None;
    for (i, s) in shapes.iter().enumerate() {
        if let Some(t) = s.ray_hit(ray) {
            if best.map_or(true, |(_, b)| t < b) {
                best = Some((i, t));
            }
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ray(origin: [f64; 3], dir: [f64; 3]) -> Ray {
        Ray {
            origin: DVec3::from_array(origin),
            direction: DVec3::from_array(dir).normalize(),
            pixel: (0, 0),
        }
    }

    #[test]
    fn hits_along_the_axis() {
        let r = ray([0.0, 0.0, 5.0], [0.0, 0.0, -1.0]);
        let shapes = [
            (ShapeKind::Box, [0.4, 0.4, 0.4], 4.8),
            (ShapeKind::Sphere, [0.4, 0.0, 0.0], 4.8),
            (ShapeKind::Cylinder, [0.4, 0.0, 0.6], 4.7),
        ];
        for (kind, size, expect) in shapes {
            let s = Shape {
                kind,
                center: [0.0; 3],
                size,
            };
            assert!((s.ray_hit(&r).unwrap() - expect).abs() < 1e-12, "{kind:?}");
        }
    }

    #[test]
    fn cylinder_side_hit_and_miss() {
        let s = Shape {
            kind: ShapeKind::Cylinder,
            center: [0.0; 3],
            size: [1.0, 0.0, 1.0],
        };
        let r = ray([3.0, 0.0, 0.0], [-1.0, 0.0, 0.0]);
        assert!((s.ray_hit(&r).unwrap() - 2.5).abs() < 1e-12);
        assert!(s.ray_hit(&ray([3.0, 0.0, 0.6], [-1.0, 0.0, 0.0])).is_none());
    }

    #[test]
    fn hits_agree_with_containment() {
        let s = Shape {
            kind: ShapeKind::Cylinder,
            center: [0.1, -0.2, 0.0],
            size: [0.8, 0.0, 0.5],
        };
        let r = ray([2.0, 1.5, 1.2], [-1.0, -0.8, -0.7]);
        let t = s.ray_hit(&r).unwrap();
        assert!(s.contains(r.at(t + 1e-6)));
        assert!(!s.contains(r.at(t - 1e-6)));
    }

    #[test]
    fn origin_inside_hits_at_zero() {
        let s = Shape {
            kind: ShapeKind::Sphere,
            center: [0.0; 3],
            size: [1.0; 3],
        };
        assert_eq!(s.ray_hit(&ray([0.1, 0.0, 0.0], [1.0, 0.0, 0.0])), Some(0.0));
    }

    #[test]
    fn coverage_of_full_and_empty_cells() {
        let s = Shape {
            kind: ShapeKind::Box,
            center: [0.0; 3],
            size: [1.0; 3],
        };
        assert_eq!(s.coverage(DVec3::splat(-0.1), DVec3::splat(0.2), 4), 1.0);
        assert_eq!(s.coverage(DVec3::splat(0.6), DVec3::splat(0.2), 4), 0.0);
        assert_eq!(
            s.coverage(DVec3::new(0.4, -0.1, -0.1), DVec3::splat(0.2), 4),
            0.5
        );
    }
}

use glam::DVec3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::BoxRecord;
use crate::scene::SceneBounds;

/// Axis-aligned 3D box given by center and side lengths `(w, l, h)` along
/// x, y and z.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub center: [f64; 3],
    pub size: [f64; 3],
}

impl Aabb {
    pub fn new(center: [f64; 3], size: [f64; 3]) -> Result<Self> {
        if center.iter().chain(&size).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("box parameters".into()));
        }
        if size.iter().any(|&s| s <= 0.0) {
            return Err(Error::invalid(format!(
                "box size {size:?} must be positive"
            )));
        }
        Ok(Aabb { center, size })
    }

    pub fn from_min_max(min: DVec3, max: DVec3) -> Result<Self> {
        Aabb::new(((min + max) * 0.5).to_array(), (max - min).to_array())
    }

    pub fn min(&self) -> DVec3 {
        DVec3::from_array(self.center) - 0.5 * DVec3::from_array(self.size)
    }

    pub fn max(&self) -> DVec3 {
        DVec3::from_array(self.center) + 0.5 * DVec3::from_array(self.size)
    }

    pub fn volume(&self) -> f64 {
        self.size.iter().product()
    }

    pub fn contains(&self, p: DVec3) -> bool {
        p.cmpge(self.min()).all() && p.cmplt(self.max()).all()
    }

    pub fn as_bounds(&self) -> SceneBounds {
        SceneBounds {
            min_corner: self.min().to_array(),
            max_corner: self.max().to_array(),
        }
    }
}

impl TryFrom<BoxRecord> for Aabb {
    type Error = Error;

    fn try_from(r: BoxRecord) -> Result<Self> {
        Aabb::new(r.center, r.size)
    }
}

impl From<Aabb> for BoxRecord {
    fn from(b: Aabb) -> Self {
        BoxRecord {
            center: b.center,
            size: b.size,
        }
    }
}

/// Regression parameters of a box relative to an RoI:
/// `(t_x, t_y, t_z, t_w, t_l, t_h)`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BoxOffsets(pub [f64; 6]);

pub fn box_intersection_volume(a: &Aabb, b: &Aabb) -> f64 {
    let lo = a.min().max(b.min());
    let hi = a.max().min(b.max());
    (hi - lo).max(DVec3::ZERO).element_product()
}

pub fn box_iou_3d(a: &Aabb, b: &Aabb) -> f64 {
    let inter = box_intersection_volume(a, b);
    if inter <= 0.0 {
        return 0.0;
    }
    inter / (a.volume() + b.volume() - inter)
}

/// Greedy suppression in descending score order (ties keep the lower
/// index first): a box is dropped when its IoU with any kept box exceeds
/// `iou_threshold`. Returns kept indices in score order.
pub fn nms_3d(boxes: &[Aabb], scores: &[f64], iou_threshold: f64) -> Result<Vec<usize>> {
    if boxes.len() != scores.len() {
        return Err(Error::mismatch(format!(
            "{} boxes with {} scores",
            boxes.len(),
            scores.len()
        )));
    }
    let mut order: Vec<usize> = (0..boxes.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut kept: Vec<usize> = Vec::new();
    for i in order {
        if kept
            .iter()
            .all(|&k| box_iou_3d(&boxes[i], &boxes[k]) <= iou_threshold)
        {
            kept.push(i);
        }
    }
    Ok(kept)
}

pub fn encode_box_offsets(roi: &Aabb, gt: &Aabb) -> BoxOffsets {
    let mut t = [0.0; 6];
    for axis in 0..3 {
        t[axis] = (gt.center[axis] - roi.center[axis]) / roi.size[axis];
        t[axis + 3] = (gt.size[axis] / roi.size[axis]).ln();
    }
    BoxOffsets(t)
}

pub fn decode_box_offsets(roi: &Aabb, offsets: &BoxOffsets) -> Aabb {
    let t = offsets.0;
    let mut center = [0.0; 3];
    let mut size = [0.0; 3];
    for axis in 0..3 {
        center[axis] = roi.center[axis] + t[axis] * roi.size[axis];
        size[axis] = roi.size[axis] * t[axis + 3].exp();
    }
    Aabb { center, size }
}

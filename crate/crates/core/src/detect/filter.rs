use glam::DVec3;

use crate::detect::boxes::{decode_box_offsets, nms_3d, Aabb, BoxOffsets};
use crate::error::{Error, Result};
use crate::scene::{SceneBounds, VoxelGrid};

/// Head output for one RoI after activation: sigmoid class scores, per-class
/// box offsets and per-class `m^3` mask probabilities (class-major, x
/// fastest). Channel 0 is background.
#[derive(Clone, Debug, PartialEq)]
pub struct Detection {
    pub roi: Aabb,
    pub class_scores: Vec<f64>,
    pub offsets: Vec<BoxOffsets>,
    pub mask_res: usize,
    pub masks: Vec<f64>,
}

impl Detection {
    pub fn validate(&self) -> Result<()> {
        let l = self.class_scores.len();
        let cells = self.mask_res.pow(3);
        if l < 2 || self.offsets.len() != l || self.masks.len() != l * cells {
            return Err(Error::mismatch(format!(
                "detection with {l} scores, {} offsets and {} mask values at m={}",
                self.offsets.len(),
                self.masks.len(),
                self.mask_res
            )));
        }
        if self
            .class_scores
            .iter()
            .chain(&self.masks)
            .any(|v| !(0.0..=1.0).contains(v))
        {
            return Err(Error::invalid(
                "detection scores and masks must lie in [0, 1]",
            ));
        }
        Ok(())
    }

    /// Best non-background class and its score; ties go to the lower class.
    pub fn best_class(&self) -> (usize, f64) {
        let mut best = (1, self.class_scores[1]);
        for (c, &s) in self.class_scores.iter().enumerate().skip(2) {
            if s > best.1 {
                best = (c, s);
            }
        }
        best
    }
}

/// A detection that survived thresholding and NMS. `mask` is the binarized
/// `m^3` mask of `class`, laid out over `bbox`.
#[derive(Clone, Debug, PartialEq)]
pub struct FilteredInstance {
    pub bbox: Aabb,
    pub class: usize,
    pub score: f64,
    pub mask_res: usize,
    pub mask: Vec<bool>,
}

impl FilteredInstance {
    /// Nearest-neighbor resampling of the box-local mask into a scene grid:
    /// voxels whose centers fall in the box take the mask cell containing
    /// them, all others are 0.
    pub fn to_scene_grid(&self, dims: [usize; 3], bounds: SceneBounds) -> Result<VoxelGrid> {
        let m = self.mask_res;
        let lo = self.bbox.min();
        let size = DVec3::from_array(self.bbox.size);
        VoxelGrid::from_fn(dims, 1, bounds, |p, out| {
            if !self.bbox.contains(p) {
                return;
            }
            let cell = ((p - lo) / size * m as f64).floor();
            let idx = |v: f64| (v as usize).min(m - 1);
            let (x, y, z) = (idx(cell.x), idx(cell.y), idx(cell.z));
            if self.mask[(z * m + y) * m + x] {
                out[0] = 1.0;
            }
        })
    }
}

/// Keeps detections whose best class score exceeds `score_threshold`,
/// decodes their boxes with that class's offsets, suppresses overlaps with
/// `nms_3d` and binarizes the class mask at 0.5. Output is in NMS order.
pub fn filter_detections(
    dets: &[Detection],
    score_threshold: f64,
    nms_threshold: f64,
) -> Result<Vec<FilteredInstance>> {
    let mut candidates = Vec::new();
    for det in dets {
        det.validate()?;
        let (class, score) = det.best_class();
        if score <= score_threshold {
            continue;
        }
        let cells = det.mask_res.pow(3);
        candidates.push(FilteredInstance {
            bbox: decode_box_offsets(&det.roi, &det.offsets[class]),
            class,
            score,
            mask_res: det.mask_res,
            mask: det.masks[class * cells..(class + 1) * cells]
                .iter()
                .map(|&p| p > 0.5)
                .collect(),
        });
    }
    let boxes: Vec<Aabb> = candidates.iter().map(|c| c.bbox).collect();
    let scores: Vec<f64> = candidates.iter().map(|c| c.score).collect();
    let kept = nms_3d(&boxes, &scores, nms_threshold)?;
    Ok(kept.into_iter().map(|i| candidates[i].clone()).collect())
}

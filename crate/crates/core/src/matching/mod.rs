//! Multi-view instance id consistency: 3D masks are projected into every
//! view and each view-local 2D mask takes the id of its best-overlapping
//! projection.

mod refine;
mod registry;

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{ensure_same_dims, BinaryMask, LabelImage};
use crate::io::{read_class_map, read_label_pgm, ClassMap};
use crate::render::march_density;
use crate::scene::{Camera, VoxelGrid};

pub use refine::refine_masks_builtin;
pub use registry::{build_registry, InstanceRegistry, RegistryInstance};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatchConfig {
    /// A 2D mask needs an IoU above this to take an instance id.
    pub iou_min: f64,
    /// Accumulated occupancy above which a pixel is inside a projection.
    pub tau: f64,
    pub samples_per_ray: usize,
    /// Panoptic classes treated as background.
    pub background_classes: Vec<u16>,
}

impl Default for MatchConfig {
    fn default() -> Self {
        MatchConfig {
            iou_min: 0.05,
            tau: 0.5,
            samples_per_ray: 128,
            background_classes: vec![0],
        }
    }
}

impl MatchConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("iou_min", self.iou_min), ("tau", self.tau)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::invalid(format!("{name} = {v} is outside [0, 1]")));
            }
        }
        if self.samples_per_ray == 0 {
            return Err(Error::invalid("samples_per_ray must be positive"));
        }
        Ok(())
    }
}

/// One view of 2D panoptic predictions: view-local ids plus their classes.
#[derive(Clone, Debug, PartialEq)]
pub struct PanopticView {
    pub labels: LabelImage,
    pub classes: ClassMap,
}

impl PanopticView {
    pub fn read(labels_path: &Path, sidecar_path: &Path) -> Result<Self> {
        Ok(PanopticView {
            labels: read_label_pgm(labels_path)?,
            classes: read_class_map(sidecar_path)?,
        })
    }
}

/// Projects several 3D occupancy masks at once. The density weights of each
/// ray are computed once and shared by all masks; pixel `p` is in mask `m`
/// when `sum_k w_k [mask_m(t_k) > 0.5]` exceeds `tau`.
pub fn project_instance_masks(
    density: &VoxelGrid,
    masks: &[&VoxelGrid],
    camera: &Camera,
    k: usize,
    tau: f64,
) -> Result<Vec<BinaryMask>> {
    for m in masks {
        if m.bounds() != density.bounds() || m.channels() != 1 {
            return Err(Error::mismatch(
                "instance masks must be 1-channel grids over the density bounds",
            ));
        }
    }
    let (w, h) = (camera.width, camera.height);
    let occupancy: Vec<Vec<f64>> = (0..w * h)
        .into_par_iter()
        .map(|p| {
            let mut acc = vec![0.0; masks.len()];
            let ray = camera.generate_ray(p / w, p % w, None);
            if let Some((samples, weights, _)) = march_density(density, &ray, k, None) {
                for (&x, &wk) in samples.positions.iter().zip(&weights) {
                    if wk == 0.0 {
                        continue;
                    }
                    for (a, m) in acc.iter_mut().zip(masks) {
                        if m.sample_scalar(x) > 0.5 {
                            *a += wk;
                        }
                    }
                }
            }
            acc
        })
        .collect();
    Ok((0..masks.len())
        .map(|m| BinaryMask {
            width: w,
            height: h,
            bits: occupancy.iter().map(|acc| acc[m] > tau).collect(),
        })
        .collect())
}

pub fn project_instance_mask(
    density: &VoxelGrid,
    mask: &VoxelGrid,
    camera: &Camera,
    k: usize,
    tau: f64,
) -> Result<BinaryMask> {
    Ok(project_instance_masks(density, &[mask], camera, k, tau)?.remove(0))
}

/// `|a and b| / |a or b|`, 0 when both are empty.
pub fn mask_iou_2d(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    ensure_same_dims(a, b)?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.bits.iter().zip(&b.bits) {
        inter += (x && y) as usize;
        union += (x || y) as usize;
    }
    Ok(if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    })
}

/// Result of matching one view: the relabeled image and, for every
/// foreground 2D mask that found an instance, `(global id, 2D class)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ViewMatch {
    pub labels: LabelImage,
    pub votes: Vec<(u16, u16)>,
}

/// Relabels a view with global ids.
///
/// `projected` pairs each global id with its projected mask. Every
/// foreground local mask takes the id of highest IoU (ties to the lower
/// global id); if that IoU is at most `iou_min` its pixels become
/// UNLABELED. Background-class masks, ids missing from the sidecar and
/// UNLABELED input pixels all become background.
pub fn match_view(
    projected: &[(u16, BinaryMask)],
    view: &PanopticView,
    config: &MatchConfig,
) -> Result<ViewMatch> {
    let labels = &view.labels;
    for (_, m) in projected {
        ensure_same_dims(labels, m)?;
    }
    let mut order: Vec<usize> = (0..projected.len()).collect();
    order.sort_by_key(|&i| projected[i].0);

    let mut remap = vec![LabelImage::BACKGROUND; 65536];
    let mut votes = Vec::new();
    let local_ids = labels.distinct_ids();
    for &local in &local_ids {
        if local == LabelImage::UNLABELED {
            continue;
        }
        let Some(&class) = view.classes.get(&local) else {
            continue;
        };
        if config.background_classes.contains(&class) {
            continue;
        }
        let mask = labels.mask_of(local);
        let mut best: Option<(u16, f64)> = None;
        for &i in &order {
            let (gid, ref proj) = projected[i];
            let iou = mask_iou_2d(&mask, proj)?;
            if best.map_or(true, |(_, b)| iou > b) {
                best = Some((gid, iou));
            }
        }
        remap[local as usize] = match best {
            Some((gid, iou)) if iou > config.iou_min => {
                votes.push((gid, class));
                gid
            }
            _ => LabelImage::UNLABELED,
        };
    }
    Ok(ViewMatch {
        labels: LabelImage {
            width: labels.width,
            height: labels.height,
            ids: labels.ids.iter().map(|&id| remap[id as usize]).collect(),
        },
        votes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::SceneBounds;
    use glam::DVec3;

    fn square(w: usize, rows: std::ops::Range<usize>, cols: std::ops::Range<usize>) -> BinaryMask {
        let mut m = BinaryMask::empty(w, w);
        for i in rows {
            for j in cols.clone() {
                m.set(i, j, true);
            }
        }
        m
    }

    #[test]
    fn iou_counts_pixels() {
        let a = square(20, 0..10, 0..10);
        let b = square(20, 5..15, 0..10);
        assert!((mask_iou_2d(&a, &b).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(mask_iou_2d(&a, &a).unwrap(), 1.0);
        let empty = BinaryMask::empty(20, 20);
        assert_eq!(mask_iou_2d(&empty, &empty).unwrap(), 0.0);
        assert!(mask_iou_2d(&a, &BinaryMask::empty(3, 3)).is_err());
    }

    fn view_from(mask: &BinaryMask, local: u16, class: u16) -> PanopticView {
        PanopticView {
            labels: LabelImage {
                width: mask.width,
                height: mask.height,
                ids: mask
                    .bits
                    .iter()
                    .map(|&b| if b { local } else { 9 })
                    .collect(),
            },
            classes: [(local, class), (9, 0)].into_iter().collect(),
        }
    }

    #[test]
    fn identical_mask_takes_the_global_id() {
        let proj = square(10, 2..6, 2..6);
        let view = view_from(&proj, 4, 2);
        let out = match_view(&[(7, proj.clone())], &view, &MatchConfig::default()).unwrap();
        assert_eq!(out.votes, vec![(7, 2)]);
        for (p, &id) in out.labels.ids.iter().enumerate() {
            assert_eq!(id, if proj.bits[p] { 7 } else { 0 });
        }
    }

    #[test]
    fn weak_overlap_becomes_unlabeled() {
        // 1 shared pixel of 4 + 21 - 1 = 24 → IoU 1/24 ≈ 0.042.
        let proj = square(10, 0..3, 0..7);
        let pred = square(10, 2..4, 6..8);
        let view = view_from(&pred, 1, 1);
        let out = match_view(&[(3, proj)], &view, &MatchConfig::default()).unwrap();
        assert!(out.votes.is_empty());
        assert_eq!(out.labels.get(2, 6), LabelImage::UNLABELED);
        assert_eq!(out.labels.get(9, 9), 0);
    }

    #[test]
    fn ties_go_to_the_lower_global_id() {
        let pred = square(10, 0..4, 0..4);
        let view = view_from(&pred, 1, 1);
        let a = square(10, 0..2, 0..4);
        let b = square(10, 2..4, 0..4);
        let out = match_view(&[(5, a), (2, b)], &view, &MatchConfig::default()).unwrap();
        assert_eq!(out.votes, vec![(2, 1)]);
    }

    #[test]
    fn empty_mask_projects_to_nothing() {
        let b = SceneBounds::cube(1.0);
        let density = VoxelGrid::filled([4, 4, 4], 1, b, 50.0).unwrap();
        let mask = VoxelGrid::zeros([4, 4, 4], 1, b).unwrap();
        let cam =
            Camera::look_at(DVec3::new(0.0, 0.0, 4.0), DVec3::ZERO, DVec3::Y, 8, 8, 0.6).unwrap();
        let out = project_instance_mask(&density, &mask, &cam, 32, 0.5).unwrap();
        assert!(out.is_empty());
    }
}

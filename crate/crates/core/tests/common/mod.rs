//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

pub mod checks;

use std::collections::BTreeMap;

use glam::DVec3;
use rand::Rng;

use inerf::detect::{box_iou_3d, Aabb};
use inerf::image::LabelImage;
use inerf::io::ClassMap;
use inerf::render::SceneModel;
use inerf::scene::{Camera, SceneBounds, VoxelGrid};

/// `max |a - b| / max |b|`, the error of a whole gradient relative to its
/// scale.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let scale = numeric.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let err = analytic
        .iter()
        .zip(numeric)
        .fold(0.0f64, |m, (a, n)| m.max((a - n).abs()));
    if scale == 0.0 {
        err
    } else {
        err / scale
    }
}

/// Central differences of `f` with respect to every entry of `x`.
pub fn central_differences(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

pub fn random_grid(
    rng: &mut impl Rng,
    dims: [usize; 3],
    channels: usize,
    range: (f64, f64),
) -> VoxelGrid {
    VoxelGrid::from_fn(dims, channels, SceneBounds::cube(1.0), |_, out| {
        for v in out.iter_mut() {
            *v = rng.gen_range(range.0..range.1);
        }
    })
    .unwrap()
}

/// A small scene with strictly positive density, so the clamp at zero never
/// sits inside a finite-difference step.
pub fn random_scene(rng: &mut impl Rng, n: usize, labels: usize) -> SceneModel {
    SceneModel::new(
        random_grid(rng, [n; 3], 1, (0.3, 4.0)),
        random_grid(rng, [n; 3], 3, (0.0, 1.0)),
        Some(random_grid(rng, [n; 3], labels, (-1.0, 1.0))),
    )
    .unwrap()
}

pub fn small_camera(width: usize, height: usize) -> Camera {
    Camera::look_at(
        DVec3::new(0.4, -2.6, 1.3),
        DVec3::new(0.05, 0.0, -0.05),
        DVec3::Z,
        width,
        height,
        0.7,
    )
    .unwrap()
}

/// Trilinear lookup written as a sum of hat functions over every voxel,
/// with coordinates clamped to the outermost voxel centers.
pub fn hat_sample(grid: &VoxelGrid, p: DVec3) -> Vec<f64> {
    let dims = grid.dims();
    let b = grid.bounds();
    let size = grid.voxel_size();
    let mut u = [0.0; 3];
    for a in 0..3 {
        let rel = (p[a] - b.min()[a]) / size[a] - 0.5;
        u[a] = rel.clamp(0.0, (dims[a] - 1) as f64);
    }
    let c = grid.channels();
    let mut out = vec![0.0; c];
    for z in 0..dims[2] {
        let wz = (1.0 - (u[2] - z as f64).abs()).max(0.0);
        if wz == 0.0 {
            continue;
        }
        for y in 0..dims[1] {
            let wy = (1.0 - (u[1] - y as f64).abs()).max(0.0);
            if wy == 0.0 {
                continue;
            }
            for x in 0..dims[0] {
                let wx = (1.0 - (u[0] - x as f64).abs()).max(0.0);
                if wx == 0.0 {
                    continue;
                }
                let v = grid.voxel(grid.voxel_index(x, y, z));
                for ch in 0..c {
                    out[ch] += wx * wy * wz * v[ch];
                }
            }
        }
    }
    out
}

/// Box IoU by jittered sampling of a `per_axis^3` lattice over the
/// bounding box of both boxes.
pub fn monte_carlo_iou(a: &Aabb, b: &Aabb, per_axis: usize, rng: &mut impl Rng) -> f64 {
    let lo = a.min().min(b.min());
    let hi = a.max().max(b.max());
    let cell = (hi - lo) / per_axis as f64;
    let (mut in_a, mut in_b, mut both) = (0u64, 0u64, 0u64);
    for z in 0..per_axis {
        for y in 0..per_axis {
            for x in 0..per_axis {
                let jitter = DVec3::new(rng.gen(), rng.gen(), rng.gen());
                let p = lo + (DVec3::new(x as f64, y as f64, z as f64) + jitter) * cell;
                let (ia, ib) = (inside(a, p), inside(b, p));
                in_a += ia as u64;
                in_b += ib as u64;
                both += (ia && ib) as u64;
            }
        }
    }
    let union = in_a + in_b - both;
    if union == 0 {
        0.0
    } else {
        both as f64 / union as f64
    }
}

fn inside(b: &Aabb, p: DVec3) -> bool {
    (0..3).all(|a| (p[a] - b.center[a]).abs() <= 0.5 * b.size[a])
}

/// Greedy NMS characterized without greediness: the kept set is the unique
/// subset in which every box is kept exactly when no kept box of higher
/// priority overlaps it beyond the threshold. Found by trying all subsets.
pub fn nms_by_enumeration(boxes: &[Aabb], scores: &[f64], threshold: f64) -> Vec<usize> {
    let n = boxes.len();
    assert!(n <= 12);
    let beats = |j: usize, i: usize| scores[j] > scores[i] || (scores[j] == scores[i] && j < i);
    let mut found = Vec::new();
    for subset in 0u32..(1 << n) {
        let kept = |i: usize| subset >> i & 1 == 1;
        let consistent = (0..n).all(|i| {
            let suppressed = (0..n).any(|j| {
                j != i && kept(j) && beats(j, i) && box_iou_3d(&boxes[i], &boxes[j]) > threshold
            });
            kept(i) == !suppressed
        });
        if consistent {
            found.push(subset);
        }
    }
    assert_eq!(found.len(), 1, "the kept set must be unique");
    let mut kept: Vec<usize> = (0..n).filter(|&i| found[0] >> i & 1 == 1).collect();
    kept.sort_by(|&a, &b| {
        if beats(a, b) {
            std::cmp::Ordering::Less
        } else {
            std::cmp::Ordering::Greater
        }
    });
    kept
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct OracleCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub iou_sum: f64,
}

/// Panoptic quality from its definition, by pixel loops over every pair of
/// segments. Ground-truth UNLABELED pixels are void.
pub fn pq_oracle(
    pred: &LabelImage,
    pred_map: &ClassMap,
    gt: &LabelImage,
    gt_map: &ClassMap,
    background: &[u16],
) -> (f64, BTreeMap<u16, OracleCounts>) {
    let is_segment = |id: u16, map: &ClassMap| {
        id != LabelImage::BACKGROUND
            && id != LabelImage::UNLABELED
            && !background.contains(&map[&id])
    };
    let mut pred_ids: Vec<u16> = pred
        .ids
        .iter()
        .copied()
        .filter(|&i| is_segment(i, pred_map))
        .collect();
    pred_ids.sort_unstable();
    pred_ids.dedup();
    let mut gt_ids: Vec<u16> = gt
        .ids
        .iter()
        .copied()
        .filter(|&i| is_segment(i, gt_map))
        .collect();
    gt_ids.sort_unstable();
    gt_ids.dedup();

    let void = |k: usize| gt.ids[k] == LabelImage::UNLABELED;
    let mut counts: BTreeMap<u16, OracleCounts> = BTreeMap::new();
    let mut pred_hit = vec![false; pred_ids.len()];
    let mut gt_hit = vec![false; gt_ids.len()];
    for (pi, &p) in pred_ids.iter().enumerate() {
        for (gi, &g) in gt_ids.iter().enumerate() {
            if pred_map[&p] != gt_map[&g] {
                continue;
            }
            let (mut inter, mut union) = (0u64, 0u64);
            for k in 0..gt.ids.len() {
                let in_p = pred.ids[k] == p && !void(k);
                let in_g = gt.ids[k] == g;
                inter += (in_p && in_g) as u64;
                union += (in_p || in_g) as u64;
            }
            if inter == 0 {
                continue;
            }
            let iou = inter as f64 / union as f64;
            if iou > 0.5 {
                let c = counts.entry(gt_map[&g]).or_default();
                c.tp += 1;
                c.iou_sum += iou;
                pred_hit[pi] = true;
                gt_hit[gi] = true;
            }
        }
    }
    for (gi, &g) in gt_ids.iter().enumerate() {
        if !gt_hit[gi] {
            counts.entry(gt_map[&g]).or_default().fn_ += 1;
        }
    }
    for (pi, &p) in pred_ids.iter().enumerate() {
        let area = pred.ids.iter().filter(|&&i| i == p).count();
        let in_void = (0..gt.ids.len())
            .filter(|&k| pred.ids[k] == p && void(k))
            .count();
        if !pred_hit[pi] && 2 * in_void <= area {
            counts.entry(pred_map[&p]).or_default().fp += 1;
        }
    }
    let per_class: Vec<f64> = counts
        .values()
        .filter(|c| c.tp + c.fp + c.fn_ > 0)
        .map(|c| c.iou_sum / (c.tp as f64 + 0.5 * (c.fp + c.fn_) as f64))
        .collect();
    let pq = if per_class.is_empty() {
        1.0
    } else {
        per_class.iter().sum::<f64>() / per_class.len() as f64
    };
    (pq, counts)
}

/// A random panoptic image built from a few overlapping rectangles.
pub fn random_panoptic(
    rng: &mut impl Rng,
    width: usize,
    height: usize,
    segments: usize,
    classes: u16,
) -> (LabelImage, ClassMap) {
    let mut img = LabelImage::filled(width, height, 0);
    let mut map = ClassMap::new();
    for _ in 0..segments {
        let id = rng.gen_range(1..200u16);
        map.entry(id).or_insert_with(|| rng.gen_range(0..classes));
        let (i0, j0) = (rng.gen_range(0..height), rng.gen_range(0..width));
        let (h, w) = (rng.gen_range(1..=height / 2), rng.gen_range(1..=width / 2));
        for i in i0..(i0 + h).min(height) {
            for j in j0..(j0 + w).min(width) {
                img.set(i, j, id);
            }
        }
    }
    let present: std::collections::BTreeSet<u16> = img.ids.iter().copied().collect();
    map.retain(|id, _| present.contains(id));
    (img, map)
}

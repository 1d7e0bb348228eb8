//! Measurements behind the acceptance criteria. Each returns the measured
//! quantity so callers can compare it with their own tolerance.

use glam::DVec3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use inerf::detect::{
    decode_box_offsets, encode_box_offsets, nms_3d, rcnn_losses, roi_align_3d, Aabb, BoxOffsets,
    RcnnLossWeights, RoiHeadOutput, RoiTarget,
};
use inerf::field::{
    appearance_loss, backprop_appearance, backprop_ray, instance_loss, regularization_loss,
    GradientBuffer, Normalization, RayFootprint, RegPatch,
};
use inerf::fixture::{make_fixture, FixtureSpec};
use inerf::image::{BinaryMask, LabelImage};
use inerf::io::ClassMap;
use inerf::matching::{build_registry, match_view, MatchConfig, PanopticView};
use inerf::metrics::{panoptic_quality, PanopticFrame};
use inerf::render::{integration_weights, march_density, render_ray, RenderedPixel, SceneModel};
use inerf::scene::{Ray, VoxelGrid};

use super::*;

/// Largest `|sum w + T_final - 1|` over `rays` random rays, whether every
/// transmittance sequence was non-increasing, and the largest deviation of
/// the weights from ones computed by the hat-function oracle.
pub fn quadrature(rays: usize, seed: u64) -> (f64, bool, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut worst, mut monotone, mut oracle_err) = (0.0f64, true, 0.0f64);
    let per_scene = 100;
    let mut density = random_grid(&mut rng, [8; 3], 1, (-5.0, 60.0));
    for r in 0..rays {
        if r % per_scene == 0 {
            let hi = rng.gen_range(1.0..200.0);
            density = random_grid(&mut rng, [8; 3], 1, (-0.2 * hi, hi));
        }
        let origin = DVec3::new(
            rng.gen_range(-3.0..3.0),
            rng.gen_range(-3.0..3.0),
            rng.gen_range(2.0..3.0),
        ) * if rng.gen() { 1.0 } else { -1.0 };
        let target = DVec3::new(
            rng.gen_range(-0.9..0.9),
            rng.gen_range(-0.9..0.9),
            rng.gen_range(-0.9..0.9),
        );
        let ray = Ray {
            origin,
            direction: (target - origin).normalize(),
            pixel: (0, 0),
        };
        let k = rng.gen_range(1..=128);
        let jitter = if rng.gen() { Some(rng.gen()) } else { None };
        let (samples, weights, t_final) =
            march_density(&density, &ray, k, jitter).expect("ray aims inside the bounds");
        worst = worst.max((weights.iter().sum::<f64>() + t_final - 1.0).abs());
        let mut optical = 0.0f64;
        let mut previous = 1.0f64;
        for ((&p, &d), &w) in samples.positions.iter().zip(&samples.deltas).zip(&weights) {
            let s = hat_sample(&density, p)[0].max(0.0) * d;
            let t = (-optical).exp();
            monotone &= t <= previous && w >= 0.0;
            previous = t;
            oracle_err = oracle_err.max((w - t * (1.0 - (-s).exp())).abs());
            optical += s;
        }
        oracle_err = oracle_err.max((t_final - (-optical).exp()).abs());
    }
    // direct optical thicknesses, including huge and zero ones
    for _ in 0..rays / 10 {
        let s: Vec<f64> = (0..rng.gen_range(1..64))
            .map(|_| match rng.gen_range(0..4) {
                0 => 0.0,
                1 => rng.gen_range(0.0..1e3),
                _ => rng.gen_range(0.0..0.5),
            })
            .collect();
        let (w, t) = integration_weights(&s).unwrap();
        worst = worst.max((w.iter().sum::<f64>() + t - 1.0).abs());
        let mut acc = 1.0;
        for &wk in &w {
            let next = acc - wk;
            monotone &= next <= acc + 1e-15;
            acc = next;
        }
    }
    (worst, monotone, oracle_err)
}

fn render_rays(model: &SceneModel, width: usize, height: usize) -> Vec<RenderedPixel> {
    let cam = small_camera(width, height);
    (0..width * height)
        .map(|p| {
            render_ray(
                model,
                &cam.generate_ray(p / width, p % width, None),
                32,
                None,
            )
        })
        .collect()
}

fn with_instance(model: &SceneModel, data: &[f64]) -> SceneModel {
    let grid = model.instance_logits.as_ref().unwrap();
    SceneModel {
        instance_logits: Some(
            VoxelGrid::from_data(grid.dims(), grid.channels(), *grid.bounds(), data.to_vec())
                .unwrap(),
        ),
        ..model.clone()
    }
}

/// Relative error of the instance-loss gradient on the instance grid.
pub fn instance_gradient(seed: u64, n: usize, normalization: Normalization) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels = 3;
    let model = random_scene(&mut rng, n, labels);
    let (w, h) = (4, 3);
    let targets: Vec<u16> = (0..w * h)
        .map(|_| rng.gen_range(0..labels as u16))
        .collect();
    let loss_of = |m: &SceneModel| {
        let logits: Vec<f64> = render_rays(m, w, h)
            .iter()
            .flat_map(|p| p.instance_logits.clone())
            .collect();
        instance_loss(&logits, &targets, labels, normalization).unwrap()
    };

    let pixels = render_rays(&model, w, h);
    let grid = model.instance_logits.as_ref().unwrap();
    let lg = loss_of(&model);
    let mut buffer = GradientBuffer::for_grid(grid);
    for (r, px) in pixels.iter().enumerate() {
        backprop_ray(
            &lg.grad[r * labels..(r + 1) * labels],
            px,
            grid,
            &mut buffer,
        )
        .unwrap();
    }
    let numeric = central_differences(grid.data(), 1e-3, |x| {
        loss_of(&with_instance(&model, x)).loss
    });
    relative_error(buffer.data(), &numeric)
}

/// Relative error of the regularizer gradient on the instance grid.
pub fn regularizer_gradient(seed: u64, n: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels = 3;
    let model = random_scene(&mut rng, n, labels);
    let (w, h) = (4, 3);
    let depths: Vec<f64> = render_rays(&model, w, h).iter().map(|p| p.depth).collect();
    let loss_of = |m: &SceneModel| {
        let patch = RegPatch {
            height: h,
            width: w,
            logits: render_rays(m, w, h)
                .iter()
                .flat_map(|p| p.instance_logits.clone())
                .collect(),
            depths: depths.clone(),
        };
        regularization_loss(&patch, labels, Normalization::RaysTimesLabels).unwrap()
    };
    let pixels = render_rays(&model, w, h);
    let grid = model.instance_logits.as_ref().unwrap();
    let lg = loss_of(&model);
    let mut buffer = GradientBuffer::for_grid(grid);
    for (r, px) in pixels.iter().enumerate() {
        backprop_ray(
            &lg.grad[r * labels..(r + 1) * labels],
            px,
            grid,
            &mut buffer,
        )
        .unwrap();
    }
    let numeric = central_differences(grid.data(), 1e-3, |x| {
        loss_of(&with_instance(&model, x)).loss
    });
    relative_error(buffer.data(), &numeric)
}

/// Relative errors of the photometric gradient on the color grid and on the
/// density grid.
pub fn appearance_gradient(seed: u64, n: usize) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = random_scene(&mut rng, n, 2);
    let (w, h) = (4, 3);
    let targets: Vec<[f64; 3]> = (0..w * h)
        .map(|_| [rng.gen(), rng.gen(), rng.gen()])
        .collect();
    let loss_of = |m: &SceneModel| {
        let colors: Vec<[f64; 3]> = render_rays(m, w, h).iter().map(|p| p.color).collect();
        appearance_loss(&colors, &targets).unwrap()
    };
    let pixels = render_rays(&model, w, h);
    let (_, grads) = loss_of(&model);
    let mut dd = GradientBuffer::for_grid(&model.density);
    let mut dc = GradientBuffer::for_grid(&model.color);
    for (g, px) in grads.iter().zip(&pixels) {
        backprop_appearance(*g, px, &model, &mut dd, &mut dc).unwrap();
    }
    let replace = |grid: &VoxelGrid, x: &[f64]| {
        VoxelGrid::from_data(grid.dims(), grid.channels(), *grid.bounds(), x.to_vec()).unwrap()
    };
    let color_numeric = central_differences(model.color.data(), 1e-4, |x| {
        let m = SceneModel {
            color: replace(&model.color, x),
            ..model.clone()
        };
        loss_of(&m).0
    });
    let density_numeric = central_differences(model.density.data(), 1e-5, |x| {
        let m = SceneModel {
            density: replace(&model.density, x),
            ..model.clone()
        };
        loss_of(&m).0
    });
    (
        relative_error(dc.data(), &color_numeric),
        relative_error(dd.data(), &density_numeric),
    )
}

/// Largest difference between footprint-rendered logits and direct ray
/// rendering.
pub fn footprint_agreement(seed: u64, n: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels = 4;
    let model = random_scene(&mut rng, n, labels);
    let grid = model.instance_logits.as_ref().unwrap();
    let mut worst = 0.0f64;
    let mut out = vec![0.0; labels];
    for px in render_rays(&model, 5, 4) {
        let fp = RayFootprint::build(grid, &px.samples, &px.weights, 0.0);
        fp.render(grid.data(), labels, &mut out);
        for (a, b) in out.iter().zip(&px.instance_logits) {
            worst = worst.max((a - b).abs());
        }
    }
    worst
}

fn away_from_kink(rng: &mut impl Rng, target: f64) -> f64 {
    loop {
        let v = target + rng.gen_range(-2.5..2.5);
        if ((v - target).abs() - 1.0).abs() > 0.05 {
            return v;
        }
    }
}

/// Relative error of the detection-head gradients over every raw output.
pub fn rcnn_gradient(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (rois, classes, m) = (5, 3, 2);
    let cells = m * m * m;
    let targets: Vec<RoiTarget> = (0..rois)
        .map(|i| RoiTarget {
            class: if i == 0 { 0 } else { rng.gen_range(0..classes) },
            offsets: BoxOffsets(std::array::from_fn(|_| rng.gen_range(-0.5..0.5))),
            mask: (0..cells)
                .map(|_| f64::from(rng.gen_range(0..2u8)))
                .collect(),
        })
        .collect();
    let mut preds: Vec<RoiHeadOutput> = targets
        .iter()
        .map(|t| RoiHeadOutput {
            class_logits: (0..classes).map(|_| rng.gen_range(-3.0..3.0)).collect(),
            offsets: (0..classes)
                .map(|_| {
                    BoxOffsets(std::array::from_fn(|d| {
                        away_from_kink(&mut rng, t.offsets.0[d])
                    }))
                })
                .collect(),
            mask_logits: (0..classes * cells)
                .map(|_| rng.gen_range(-3.0..3.0))
                .collect(),
        })
        .collect();
    let weights = RcnnLossWeights {
        lambda_reg: 0.7,
        lambda_mask: 1.3,
    };
    let per_roi = classes + 6 * classes + classes * cells;
    let flatten = |p: &[RoiHeadOutput]| -> Vec<f64> {
        p.iter()
            .flat_map(|r| {
                r.class_logits
                    .iter()
                    .copied()
                    .chain(r.offsets.iter().flat_map(|o| o.0))
                    .chain(r.mask_logits.iter().copied())
                    .collect::<Vec<_>>()
            })
            .collect()
    };
    let unflatten = |x: &[f64], p: &mut [RoiHeadOutput]| {
        for (r, chunk) in p.iter_mut().zip(x.chunks(per_roi)) {
            r.class_logits.copy_from_slice(&chunk[..classes]);
            for (c, o) in r.offsets.iter_mut().enumerate() {
                o.0.copy_from_slice(&chunk[classes + 6 * c..classes + 6 * c + 6]);
            }
            r.mask_logits.copy_from_slice(&chunk[7 * classes..]);
        }
    };
    let (_, grads) = rcnn_losses(&preds, &targets, m, weights).unwrap();
    let analytic: Vec<f64> = (0..rois)
        .flat_map(|i| {
            grads.class_logits[i]
                .iter()
                .copied()
                .chain(grads.offsets[i].iter().flatten().copied())
                .chain(grads.mask_logits[i].iter().copied())
                .collect::<Vec<_>>()
        })
        .collect();
    let x = flatten(&preds);
    let numeric = central_differences(&x, 1e-5, |x| {
        unflatten(x, &mut preds);
        rcnn_losses(&preds, &targets, m, weights).unwrap().0.total
    });
    relative_error(&analytic, &numeric)
}

fn random_box(rng: &mut impl Rng, spread: f64) -> Aabb {
    Aabb::new(
        std::array::from_fn(|_| rng.gen_range(-spread..spread)),
        std::array::from_fn(|_| rng.gen_range(0.2..1.5)),
    )
    .unwrap()
}

/// Largest `|box_iou_3d - Monte Carlo IoU|` over `pairs` overlapping pairs
/// at `per_axis^3` samples each.
pub fn iou_vs_monte_carlo(pairs: usize, per_axis: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..pairs {
        let a = random_box(&mut rng, 0.3);
        let b = random_box(&mut rng, 0.3);
        let mc = monte_carlo_iou(&a, &b, per_axis, &mut rng);
        worst = worst.max((inerf::detect::box_iou_3d(&a, &b) - mc).abs());
    }
    worst
}

/// Number of trials on which `nms_3d` differs from the enumeration oracle.
pub fn nms_disagreements(trials: usize, seed: u64) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..trials)
        .filter(|_| {
            let n = rng.gen_range(1..=9);
            let boxes: Vec<Aabb> = (0..n).map(|_| random_box(&mut rng, 0.6)).collect();
            // coarse scores so ties occur
            let scores: Vec<f64> = (0..n)
                .map(|_| f64::from(rng.gen_range(0..5u8)) / 4.0)
                .collect();
            let threshold = rng.gen_range(0.0..0.6);
            nms_3d(&boxes, &scores, threshold).unwrap()
                != nms_by_enumeration(&boxes, &scores, threshold)
        })
        .count()
}

/// Largest error of `decode(roi, encode(roi, gt))` against `gt`, and of
/// `encode(roi, decode(roi, t))` against `t`.
pub fn offset_round_trip(trials: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let roi = random_box(&mut rng, 2.0);
        let gt = random_box(&mut rng, 2.0);
        let back = decode_box_offsets(&roi, &encode_box_offsets(&roi, &gt));
        for a in 0..3 {
            worst = worst.max((back.center[a] - gt.center[a]).abs());
            worst = worst.max((back.size[a] - gt.size[a]).abs());
        }
        let t = BoxOffsets(std::array::from_fn(|_| rng.gen_range(-2.0..2.0)));
        let again = encode_box_offsets(&roi, &decode_box_offsets(&roi, &t));
        for d in 0..6 {
            worst = worst.max((again.0[d] - t.0[d]).abs());
        }
    }
    worst
}

/// Largest difference between `roi_align_3d` and averaging hat-function
/// samples at the subcell centers.
pub fn roi_align_vs_brute_force(trials: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let dims = [
            rng.gen_range(2..7),
            rng.gen_range(2..7),
            rng.gen_range(2..7),
        ];
        let features = random_grid(&mut rng, dims, 2, (-1.0, 1.0));
        let roi = random_box(&mut rng, 0.8);
        let res = rng.gen_range(1..5);
        let sampling = rng.gen_range(1..4);
        let out = roi_align_3d(&features, &roi, res, sampling).unwrap();
        let lo = roi.min();
        let cell = DVec3::from_array(roi.size) / res as f64;
        for z in 0..res {
            for y in 0..res {
                for x in 0..res {
                    let mut expect = [0.0; 2];
                    let s = sampling as f64;
                    for (sx, sy, sz) in subcells(sampling) {
                        let frac = DVec3::new(
                            x as f64 + (sx as f64 + 0.5) / s,
                            y as f64 + (sy as f64 + 0.5) / s,
                            z as f64 + (sz as f64 + 0.5) / s,
                        );
                        let v = hat_sample(&features, lo + frac * cell);
                        for c in 0..2 {
                            expect[c] += v[c] / (s * s * s);
                        }
                    }
                    let got = out.voxel(out.voxel_index(x, y, z));
                    for c in 0..2 {
                        worst = worst.max((got[c] - expect[c]).abs());
                    }
                }
            }
        }
    }
    worst
}

fn subcells(n: usize) -> impl Iterator<Item = (usize, usize, usize)> {
    (0..n * n * n).map(move |i| (i % n, i / n % n, i / (n * n)))
}

/// Fraction of labeled pixels whose matched id equals the ground-truth id,
/// on a 4-object fixture with per-view id permutations.
pub fn matching_recovery(seed: u64) -> f64 {
    let spec = FixtureSpec {
        objects: FixtureSpec::standard_objects(4),
        seed,
        ..FixtureSpec::default()
    };
    let fixture = make_fixture(&spec).unwrap();
    let views: Vec<_> = fixture
        .train
        .iter()
        .zip(&fixture.panoptic)
        .map(|(v, p)| (v.camera.clone(), p.clone()))
        .collect();
    let (_, labels) = build_registry(
        fixture.instances.clone(),
        &fixture.scene.density,
        &views,
        &MatchConfig::default(),
    )
    .unwrap();
    let (mut labeled, mut right) = (0usize, 0usize);
    for ((view, matched), (_, panoptic)) in fixture.train.iter().zip(&labels).zip(&views) {
        for (k, &local) in panoptic.labels.ids.iter().enumerate() {
            if local == LabelImage::BACKGROUND
                || panoptic.classes.get(&local).copied().unwrap_or(0) == 0
            {
                continue;
            }
            labeled += 1;
            right += usize::from(matched.ids[k] == view.labels.ids[k]);
        }
    }
    right as f64 / labeled as f64
}

/// Checks the low-IoU rule at its boundary: a 20-pixel mask overlapping
/// its best projection in exactly one pixel out of a 20-pixel union has
/// IoU 0.05 and must become UNLABELED; one pixel out of 19 must match.
pub fn low_iou_rule_holds() -> bool {
    let (w, h) = (10, 10);
    let mut local = LabelImage::filled(w, h, 0);
    for j in 0..10 {
        local.set(0, j, 7);
        local.set(1, j, 7);
    }
    let classes: ClassMap = [(7, 1)].into_iter().collect();
    let view = PanopticView {
        labels: local,
        classes,
    };
    let mut projection = BinaryMask::empty(w, h);
    projection.set(1, 9, true);
    let at = match_view(&[(3, projection.clone())], &view, &MatchConfig::default()).unwrap();
    let mut view19 = view.clone();
    view19.labels.set(0, 0, 0);
    let over = match_view(&[(3, projection)], &view19, &MatchConfig::default()).unwrap();
    let all_unlabeled = view
        .labels
        .ids
        .iter()
        .zip(&at.labels.ids)
        .all(|(&l, &m)| (l == 7) == (m == LabelImage::UNLABELED));
    let all_matched = view19
        .labels
        .ids
        .iter()
        .zip(&over.labels.ids)
        .all(|(&l, &m)| (l == 7) == (m == 3));
    all_unlabeled && all_matched && at.votes.is_empty() && over.votes == vec![(3, 1)]
}

/// PQ of the hand-computed example whose answer is 0.4.
pub fn hand_pq() -> f64 {
    let gt = LabelImage::from_ids(6, 2, vec![1, 1, 1, 1, 1, 0, 2, 2, 0, 0, 0, 0]).unwrap();
    let pred = LabelImage::from_ids(6, 2, vec![7, 7, 7, 7, 0, 0, 0, 0, 0, 8, 8, 8]).unwrap();
    let gm: ClassMap = [(1, 1), (2, 1)].into_iter().collect();
    let pm: ClassMap = [(7, 1), (8, 1)].into_iter().collect();
    panoptic_quality(
        PanopticFrame {
            labels: &pred,
            semantic_map: &pm,
        },
        PanopticFrame {
            labels: &gt,
            semantic_map: &gm,
        },
        &[0],
    )
    .unwrap()
    .scores
    .pq
}

fn permute(img: &LabelImage, map: &ClassMap, rng: &mut impl Rng) -> (LabelImage, ClassMap) {
    use rand::seq::SliceRandom;
    let ids: Vec<u16> = map.keys().copied().collect();
    let mut fresh: Vec<u16> = (1..1000).collect();
    fresh.shuffle(rng);
    let to: std::collections::BTreeMap<u16, u16> = ids.iter().copied().zip(fresh).collect();
    let labels = LabelImage {
        ids: img
            .ids
            .iter()
            .map(|id| to.get(id).copied().unwrap_or(*id))
            .collect(),
        ..img.clone()
    };
    let map = map.iter().map(|(id, c)| (to[id], *c)).collect();
    (labels, map)
}

/// Over `images` random 32x32 pairs: how many disagree with the oracle
/// (scores or counts), and how many change under id permutation.
pub fn pq_against_oracle(images: usize, seed: u64) -> (usize, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut oracle_misses, mut permutation_misses) = (0, 0);
    for _ in 0..images {
        let segments = rng.gen_range(0..8);
        let (gt, gm) = random_panoptic(&mut rng, 32, 32, segments, 3);
        let (mut pred, pm) = if rng.gen_bool(0.5) {
            let segments = rng.gen_range(0..8);
            random_panoptic(&mut rng, 32, 32, segments, 3)
        } else {
            // a perturbed copy, so that matches actually occur
            let mut p = gt.clone();
            for _ in 0..rng.gen_range(0..300) {
                let k = rng.gen_range(0..p.ids.len());
                p.ids[k] = 0;
            }
            (p, gm.clone())
        };
        let mut gt = gt;
        if rng.gen_bool(0.3) {
            for _ in 0..rng.gen_range(0..200) {
                let k = rng.gen_range(0..gt.ids.len());
                gt.ids[k] = LabelImage::UNLABELED;
            }
        }
        if rng.gen_bool(0.2) {
            pred.ids.iter_mut().for_each(|v| *v = 0);
        }
        let bg = [0u16];
        let r = panoptic_quality(
            PanopticFrame {
                labels: &pred,
                semantic_map: &pm,
            },
            PanopticFrame {
                labels: &gt,
                semantic_map: &gm,
            },
            &bg,
        )
        .unwrap();
        let (pq, counts) = pq_oracle(&pred, &pm, &gt, &gm, &bg);
        let counts_agree =
            counts
                .iter()
                .filter(|(_, c)| c.tp + c.fp + c.fn_ > 0)
                .all(|(class, c)| {
                    r.per_class.get(class).is_some_and(|rc| {
                        (rc.tp, rc.fp, rc.fn_) == (c.tp, c.fp, c.fn_) && rc.iou_sum == c.iou_sum
                    })
                });
        if r.scores.pq != pq || !counts_agree {
            oracle_misses += 1;
        }
        let (pp, ppm) = permute(&pred, &pm, &mut rng);
        let (gp, gpm) = permute(&gt, &gm, &mut rng);
        let rp = panoptic_quality(
            PanopticFrame {
                labels: &pp,
                semantic_map: &ppm,
            },
            PanopticFrame {
                labels: &gp,
                semantic_map: &gpm,
            },
            &bg,
        )
        .unwrap();
        let same_counts = rp.per_class.iter().all(|(c, k)| {
            r.per_class
                .get(c)
                .is_some_and(|o| (o.tp, o.fp, o.fn_) == (k.tp, k.fp, k.fn_))
        });
        if (rp.scores.pq - r.scores.pq).abs() > 1e-12 || !same_counts {
            permutation_misses += 1;
        }
    }
    (oracle_misses, permutation_misses)
}

//! Trains raw detection-head outputs toward their targets with the
//! classification, regression and mask losses, then filters the resulting
//! detections into instance masks on the scene grid.
//!
//! cargo run --release --example detection_head -- [steps]

use inerf::detect::{
    filter_detections, rcnn_losses, sigmoid, Aabb, BoxOffsets, Detection, RcnnLossWeights,
    RoiHeadOutput, RoiTarget,
};
use inerf::scene::SceneBounds;

fn main() -> inerf::Result<()> {
    let steps: usize = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(300);
    let (classes, m) = (3, 4);
    let cells = m * m * m;
    let sphere: Vec<f64> = (0..cells)
        .map(|v| {
            let c = [v % m, v / m % m, v / (m * m)].map(|i| i as f64 + 0.5 - m as f64 / 2.0);
            f64::from(c.iter().map(|x| x * x).sum::<f64>() < 3.0)
        })
        .collect();
    let rois = [
        Aabb::new([-0.4, 0.0, 0.0], [0.5, 0.5, 0.5])?,
        Aabb::new([0.4, 0.1, 0.0], [0.6, 0.4, 0.5])?,
        Aabb::new([-0.38, 0.02, 0.0], [0.5, 0.5, 0.5])?,
    ];
    let targets = vec![
        RoiTarget {
            class: 1,
            offsets: BoxOffsets([0.05, 0.0, 0.0, 0.1, 0.0, 0.0]),
            mask: sphere.clone(),
        },
        RoiTarget {
            class: 2,
            offsets: BoxOffsets([0.0, -0.1, 0.0, 0.0, 0.2, 0.0]),
            mask: sphere,
        },
        RoiTarget {
            class: 1,
            offsets: BoxOffsets::default(),
            mask: vec![1.0; cells],
        },
    ];
    let mut heads: Vec<RoiHeadOutput> = (0..rois.len())
        .map(|_| RoiHeadOutput {
            class_logits: vec![0.0; classes],
            offsets: vec![BoxOffsets::default(); classes],
            mask_logits: vec![0.0; classes * cells],
        })
        .collect();

    let lr = 2.0;
    for step in 0..=steps {
        let (losses, grads) = rcnn_losses(&heads, &targets, m, RcnnLossWeights::default())?;
        if step % 100 == 0 {
            println!(
                "step {step:4}: cls {:.4} reg {:.4} mask {:.4}",
                losses.cls, losses.reg, losses.mask
            );
        }
        for (i, h) in heads.iter_mut().enumerate() {
            h.class_logits
                .iter_mut()
                .zip(&grads.class_logits[i])
                .for_each(|(x, g)| *x -= lr * g);
            for (o, g) in h.offsets.iter_mut().zip(&grads.offsets[i]) {
                o.0.iter_mut().zip(g).for_each(|(x, g)| *x -= lr * g);
            }
            h.mask_logits
                .iter_mut()
                .zip(&grads.mask_logits[i])
                .for_each(|(x, g)| *x -= lr * g);
        }
    }

    let detections: Vec<Detection> = heads
        .iter()
        .zip(&rois)
        .map(|(h, roi)| Detection {
            roi: *roi,
            class_scores: h.class_logits.iter().map(|&z| sigmoid(z)).collect(),
            offsets: h.offsets.clone(),
            mask_res: m,
            masks: h.mask_logits.iter().map(|&z| sigmoid(z)).collect(),
        })
        .collect();
    let kept = filter_detections(&detections, 0.5, 0.15)?;
    for inst in &kept {
        let grid = inst.to_scene_grid([32; 3], SceneBounds::cube(1.0))?;
        let voxels = grid.data().iter().filter(|&&v| v > 0.0).count();
        println!(
            "class {} score {:.3} box center {:.3?} size {:.3?}: {voxels} scene voxels",
            inst.class, inst.score, inst.bbox.center, inst.bbox.size
        );
    }
    println!(
        "{} of {} detections survive filtering",
        kept.len(),
        detections.len()
    );
    Ok(())
}

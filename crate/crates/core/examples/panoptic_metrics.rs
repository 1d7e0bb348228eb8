//! Scores a predicted panoptic map against ground truth with mIoU and
//! panoptic quality.
//!
//! cargo run --release --example panoptic_metrics

use inerf::image::LabelImage;
use inerf::io::ClassMap;
use inerf::metrics::{evaluate_views, panoptic_quality, PanopticFrame};

fn main() -> inerf::Result<()> {
    // Two ground-truth objects of class 1; the prediction finds most of the
    // first, misses the second and invents a third.
    let gt = LabelImage::from_ids(6, 2, vec![1, 1, 1, 1, 1, 0, 2, 2, 0, 0, 0, 0])?;
    let pred = LabelImage::from_ids(6, 2, vec![7, 7, 7, 7, 0, 0, 0, 0, 0, 8, 8, 8])?;
    let gt_map: ClassMap = [(1, 1), (2, 1)].into_iter().collect();
    let pred_map: ClassMap = [(7, 1), (8, 1)].into_iter().collect();
    let gt_frame = PanopticFrame {
        labels: &gt,
        semantic_map: &gt_map,
    };
    let pred_frame = PanopticFrame {
        labels: &pred,
        semantic_map: &pred_map,
    };

    let pq = panoptic_quality(pred_frame, gt_frame, &[0])?;
    let c = &pq.per_class[&1];
    println!("class 1: TP {} FP {} FN {}", c.tp, c.fp, c.fn_);
    println!(
        "PQ {:.3} = SQ {:.3} x RQ {:.3}",
        pq.scores.pq, pq.scores.sq, pq.scores.rq
    );

    let report = evaluate_views(&[pred_frame], &[gt_frame], 2, &[0])?;
    println!(
        "{}",
        serde_json::to_string_pretty(&report).expect("serializable")
    );
    Ok(())
}

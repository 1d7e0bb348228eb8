//! 3D box utilities: IoU, non-maximum suppression, offset encoding and
//! RoI resampling of a feature grid.
//!
//! cargo run --release --example detection_geometry

use inerf::detect::{
    box_iou_3d, decode_box_offsets, encode_box_offsets, nms_3d, roi_align_3d, Aabb,
};
use inerf::scene::{SceneBounds, VoxelGrid};

fn main() -> inerf::Result<()> {
    let a = Aabb::new([0.0, 0.0, 0.0], [1.0, 1.0, 1.0])?;
    let b = Aabb::new([0.5, 0.0, 0.0], [1.0, 1.0, 1.0])?;
    println!(
        "IoU of unit cubes shifted by half a side: {:.4}",
        box_iou_3d(&a, &b)
    );

    let boxes = vec![
        a,
        b,
        Aabb::new([0.05, 0.0, 0.0], [1.0, 1.1, 0.9])?,
        Aabb::new([3.0, 0.0, 0.0], [1.0, 1.0, 1.0])?,
    ];
    let scores = [0.9, 0.6, 0.8, 0.3];
    let kept = nms_3d(&boxes, &scores, 0.15)?;
    println!("NMS at 0.15 keeps {kept:?}");

    let roi = Aabb::new([0.1, -0.1, 0.0], [0.8, 0.8, 0.8])?;
    let gt = Aabb::new([0.2, 0.0, 0.05], [1.0, 0.6, 0.9])?;
    let t = encode_box_offsets(&roi, &gt);
    let back = decode_box_offsets(&roi, &t);
    println!(
        "offsets {:.4?} decode to center {:.4?} size {:.4?}",
        t.0, back.center, back.size
    );

    // A linear ramp survives resampling exactly.
    let features = VoxelGrid::from_fn([16; 3], 1, SceneBounds::cube(1.0), |p, o| {
        o[0] = p.x + 2.0 * p.y - p.z
    })?;
    let pooled = roi_align_3d(&features, &roi, 4, 2)?;
    let c = pooled.voxel_center(0, 0, 0);
    println!(
        "roi_align first cell at {:.3?}: {:.4} (ramp value {:.4})",
        c.to_array(),
        pooled.voxel(0)[0],
        c.x + 2.0 * c.y - c.z
    );
    Ok(())
}

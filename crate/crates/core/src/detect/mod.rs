//! Box geometry, suppression, RoI resampling and the detection-head losses.

mod boxes;
mod filter;
mod losses;
mod roi_align;

pub use boxes::{
    box_intersection_volume, box_iou_3d, decode_box_offsets, encode_box_offsets, nms_3d, Aabb,
    BoxOffsets,
};
pub use filter::{filter_detections, Detection, FilteredInstance};
pub use losses::{
    bce_with_logit_grad, rcnn_losses, sigmoid, smooth_l1, smooth_l1_grad, RcnnGradients,
    RcnnLossWeights, RcnnLosses, RoiHeadOutput, RoiTarget, BCE_EPS, SMOOTH_L1_BETA,
};
pub use roi_align::roi_align_3d;
